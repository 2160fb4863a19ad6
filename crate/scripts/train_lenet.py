#!/usr/bin/env python3
"""Train the reference LeNet fixture and export it as a weight manifest.

Topology: conv 5x5x1x20 -> relu -> maxpool 2 -> conv 5x5x20x50 -> relu ->
maxpool 2 -> flatten -> dense 500 -> relu -> dense 10 -> softmax.

Usage:
    python3 scripts/train_lenet.py --data <dir with train-*/t10k-* idx files> \
        --out crates/core/tests/fixtures/lenet

Blobs are raw little-endian f32 in (Num, C, H, W) order; dense weights are
stored as (out, in, 1, 1). Flatten order is (C, H, W), matching the Rust
evaluator.
"""
import argparse
import json
import os

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    magic = int.from_bytes(raw[:4], "big")
    ndim = magic & 0xFF
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    return np.frombuffer(raw[4 + 4 * ndim :], dtype=np.uint8).reshape(dims)


class LeNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 20, 5)
        self.conv2 = nn.Conv2d(20, 50, 5)
        self.fc1 = nn.Linear(800, 500)
        self.fc2 = nn.Linear(500, 10)

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = torch.flatten(x, 1)
        x = F.relu(self.fc1(x))
        return self.fc2(x)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    torch.set_num_threads(max(1, os.cpu_count() or 1))

    def load(prefix):
        x = read_idx(os.path.join(args.data, f"{prefix}-images-idx3-ubyte"))
        y = read_idx(os.path.join(args.data, f"{prefix}-labels-idx1-ubyte"))
        x = torch.from_numpy(x.astype(np.float32) / 255.0).unsqueeze(1)
        return x, torch.from_numpy(y.astype(np.int64))

    xtr, ytr = load("train")
    xte, yte = load("t10k")

    model = LeNet()
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=1, gamma=0.5)
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(xtr))
        for i in range(0, len(xtr), 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            loss = F.cross_entropy(model(xtr[idx]), ytr[idx])
            loss.backward()
            opt.step()
        sched.step()
        model.eval()
        with torch.no_grad():
            acc = (model(xte).argmax(1) == yte).float().mean().item()
        print(f"epoch {epoch + 1}: test accuracy {acc:.4f}")

    os.makedirs(args.out, exist_ok=True)
    sd = {k: v.detach().numpy().astype("<f4") for k, v in model.state_dict().items()}
    layers = []
    specs = [
        ("conv1", "conv", sd["conv1.weight"], sd["conv1.bias"]),
        ("conv2", "conv", sd["conv2.weight"], sd["conv2.bias"]),
        ("fc1", "dense", sd["fc1.weight"][:, :, None, None], sd["fc1.bias"]),
        ("fc2", "dense", sd["fc2.weight"][:, :, None, None], sd["fc2.bias"]),
    ]
    for name, kind, w, b in specs:
        w.tofile(os.path.join(args.out, f"{name}.bin"))
        b.tofile(os.path.join(args.out, f"{name}.bias.bin"))
        layers.append(
            {
                "name": name,
                "kind": kind,
                "dims": list(w.shape),
                "blob": f"{name}.bin",
                "bias": f"{name}.bias.bin",
            }
        )
    manifest = {
        "version": 1,
        "layers": layers,
        "network": {
            "input": [28, 28, 1],
            "ops": [
                {"op": "conv", "layer": "conv1", "stride": 1, "padding": "valid"},
                {"op": "relu"},
                {"op": "maxpool", "size": 2, "stride": 2},
                {"op": "conv", "layer": "conv2", "stride": 1, "padding": "valid"},
                {"op": "relu"},
                {"op": "maxpool", "size": 2, "stride": 2},
                {"op": "flatten"},
                {"op": "dense", "layer": "fc1"},
                {"op": "relu"},
                {"op": "dense", "layer": "fc2"},
                {"op": "softmax"},
            ],
        },
    }
    with open(os.path.join(args.out, "model.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
