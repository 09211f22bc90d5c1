#!/usr/bin/env python3
"""Regenerate the shipped fixtures.

Produces, under fixtures/:
  conv1.npy                 standalone [16,3,3,3] float32 conv weight
  data/                     synthetic 10-class evaluation set (images.npy, labels.npy)
  tinynet/                  briefly trained residual net
  tinynet-l1/               same net trained with an L1 penalty on conv weights
  tinynet-l1-series/        epoch_010 ... epoch_200 checkpoints of that run
  reference_logits.npy      torch logits of tinynet on the first 32 eval images
  fixtures.json             metadata computed here with numpy / torch

Kernel counts, the conv1 checksum, reference logits and the numpy mask counts
in fixtures.json are computed independently of the C++ code. Golden values that
are captured from the C++ tool are written separately by tools/freeze_goldens.sh.

Usage: python3 tools/make_fixtures.py [--out fixtures] [--epochs 200]
"""

import argparse
import json
import os
import shutil

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGE = 16
CLASSES = 10


def make_dataset(rng, n, templates, noise):
    labels = rng.integers(0, CLASSES, size=n)
    images = np.empty((n, 3, IMAGE, IMAGE), dtype=np.float32)
    for i, y in enumerate(labels):
        base = templates[y]
        dy, dx = rng.integers(-2, 3, size=2)
        shifted = np.roll(np.roll(base, dy, axis=1), dx, axis=2)
        gain = rng.uniform(0.7, 1.3)
        images[i] = gain * shifted + noise * rng.standard_normal(base.shape)
    return images, labels.astype(np.int64)


def make_templates(rng):
    yy, xx = np.meshgrid(np.arange(IMAGE), np.arange(IMAGE), indexing="ij")
    templates = np.zeros((CLASSES, 3, IMAGE, IMAGE), dtype=np.float32)
    for c in range(CLASSES):
        for ch in range(3):
            acc = np.zeros((IMAGE, IMAGE))
            for _ in range(3):
                fy, fx = rng.uniform(0.2, 1.2, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                acc += np.sin(fy * yy + fx * xx + phase)
            templates[c, ch] = acc / 3.0
    return templates


class Bottleneck(nn.Module):
    def __init__(self, cin, mid, cout, stride):
        super().__init__()
        self.c1 = nn.Conv2d(cin, mid, 1, bias=False)
        self.b1 = nn.BatchNorm2d(mid)
        self.c2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False)
        self.b2 = nn.BatchNorm2d(mid)
        self.c3 = nn.Conv2d(mid, cout, 1, bias=False)
        self.b3 = nn.BatchNorm2d(cout)
        self.proj = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)
        self.bp = nn.BatchNorm2d(cout)

    def forward(self, x):
        y = F.relu(self.b1(self.c1(x)))
        y = F.relu(self.b2(self.c2(y)))
        y = self.b3(self.c3(y))
        return F.relu(y + self.bp(self.proj(x)))


class TinyNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.stem = nn.Conv2d(3, 16, 3, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(16)
        self.block1 = Bottleneck(16, 8, 32, 1)
        self.block2 = Bottleneck(32, 16, 32, 2)
        self.head = nn.Conv2d(32, 32, 3, padding=1, bias=False)
        self.head_bn = nn.BatchNorm2d(32)
        self.fc = nn.Linear(32, CLASSES)

    def forward(self, x):
        x = F.relu(self.stem_bn(self.stem(x)))
        x = self.block2(self.block1(x))
        x = F.relu(self.head_bn(self.head(x)))
        return self.fc(x.mean(dim=(2, 3)))


def conv_modules(model):
    return [(n, m) for n, m in model.named_modules() if isinstance(m, nn.Conv2d)]


class ManifestWriter:
    def __init__(self, model):
        self.model = model
        self.layers = []
        self.tensors = {}

    def tensor(self, name, value):
        self.tensors[name] = value.detach().cpu().numpy().astype(np.float32)
        return name

    def add(self, name, op, inputs, attrs=None, refs=None):
        layer = {"name": name, "op_kind": op, "inputs": inputs}
        if attrs:
            layer["attrs"] = attrs
        if refs:
            layer["weight_refs"] = refs
        self.layers.append(layer)
        return name

    def conv(self, name, m, x):
        refs = {"weights": self.tensor(name + ".weight", m.weight)}
        attrs = {"stride": m.stride[0], "padding": m.padding[0]}
        return self.add(name, "conv2d", [x], attrs, refs)

    def bn(self, name, m, x):
        refs = {
            "gamma": self.tensor(name + ".gamma", m.weight),
            "beta": self.tensor(name + ".beta", m.bias),
            "mean": self.tensor(name + ".mean", m.running_mean),
            "var": self.tensor(name + ".var", m.running_var),
        }
        return self.add(name, "batchnorm", [x], {"epsilon": m.eps}, refs)

    def relu(self, name, x):
        return self.add(name, "relu", [x])

    def block(self, prefix, b, x):
        y = self.relu(prefix + ".relu1", self.bn(prefix + ".bn1", b.b1, self.conv(prefix + ".conv1", b.c1, x)))
        y = self.relu(prefix + ".relu2", self.bn(prefix + ".bn2", b.b2, self.conv(prefix + ".conv2", b.c2, y)))
        y = self.bn(prefix + ".bn3", b.b3, self.conv(prefix + ".conv3", b.c3, y))
        p = self.bn(prefix + ".bnp", b.bp, self.conv(prefix + ".proj", b.proj, x))
        s = self.add(prefix + ".add", "add", [y, p])
        return self.relu(prefix + ".out", s)

    def build(self):
        m = self.model
        x = self.add("input", "input", [], {"shape": [3, IMAGE, IMAGE]})
        x = self.relu("stem.relu", self.bn("stem.bn", m.stem_bn, self.conv("stem.conv", m.stem, x)))
        x = self.block("block1", m.block1, x)
        x = self.block("block2", m.block2, x)
        x = self.relu("head.relu", self.bn("head.bn", m.head_bn, self.conv("head.conv", m.head, x)))
        x = self.add("pool", "global_avg_pool", [x])
        refs = {"weights": self.tensor("fc.weight", m.fc.weight), "bias": self.tensor("fc.bias", m.fc.bias)}
        x = self.add("fc", "dense", [x], None, refs)
        self.add("softmax", "softmax", [x])

    def save(self, directory, label):
        self.build()
        os.makedirs(os.path.join(directory, "tensors"), exist_ok=True)
        decls = {}
        for name, value in sorted(self.tensors.items()):
            fname = name + ".npy"
            np.save(os.path.join(directory, "tensors", fname), value)
            decls[name] = {"file": fname, "shape": list(value.shape)}
        manifest = {
            "format": "kernelspect.manifest/1",
            "label": label,
            "tensor_dir": "tensors",
            "tensors": decls,
            "layers": self.layers,
        }
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1)
            f.write("\n")


# --- independent numpy scoring (oracle for golden mask counts) -------------

THRESHOLDS = {
    "det": {1: 1e-4, 2: 1e-8, 3: 1e-12},
    "det_gram": {1: 1e-8, 2: 1e-16, 3: 1e-24},
}
MODES = ["det", "det_gram", "min_eig", "min_eig_real", "spectral_radius",
         "spectral_radius_real", "spectral_norm", "weight"]


def numpy_scores(k):
    k = k.astype(np.float64)
    ev = np.linalg.eigvals(k)
    return {
        "det": abs(np.linalg.det(k)),
        # LU based, so near 1e-24 it can disagree with a cofactor expansion
        "det_gram": abs(np.linalg.det(k.T @ k)),
        "min_eig": np.min(np.abs(ev)),
        "min_eig_real": np.min(np.abs(ev.real)),
        "spectral_radius": np.max(np.abs(ev)),
        "spectral_radius_real": np.max(np.abs(ev.real)),
        "spectral_norm": np.linalg.norm(k, 2),
        "weight": np.mean(np.abs(k)),
    }


def numpy_masks(model):
    counts = {m: 0 for m in MODES}
    pruned_weights = {m: 0 for m in MODES}
    total = 0
    total_weights = 0
    for _, conv in conv_modules(model):
        w = conv.weight.detach().numpy().astype(np.float32)
        o, i, kh, _ = w.shape
        for a in range(o):
            for b in range(i):
                s = numpy_scores(w[a, b])
                total += 1
                total_weights += kh * kh
                for m in MODES:
                    thr = THRESHOLDS.get(m, {}).get(kh, 1e-4)
                    if s[m] < thr:
                        counts[m] += 1
                        pruned_weights[m] += kh * kh
    return {
        "kernel_total": total,
        "weight_total": total_weights,
        "pruned_kernels": counts,
        "weight_prune_ratio": {m: pruned_weights[m] / total_weights for m in MODES},
    }


def zip_snapshot(directory, archive):
    """Deflated zip of a snapshot directory, manifest at the archive root."""
    import zipfile
    with zipfile.ZipFile(archive, "w", compression=zipfile.ZIP_DEFLATED) as z:
        for root, _, files in sorted(os.walk(directory)):
            for f in sorted(files):
                full = os.path.join(root, f)
                z.write(full, os.path.relpath(full, directory))


def kernel_count(model):
    return sum(m.in_channels * m.out_channels for _, m in conv_modules(model))


def accuracy(model, x, y):
    model.eval()
    with torch.no_grad():
        return float((model(x).argmax(1) == y).float().mean())


def train(model, x, y, epochs, l1, lr, checkpoint=None):
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=[epochs // 2, 3 * epochs // 4], gamma=0.1)
    gen = torch.Generator().manual_seed(1)
    convs = [m.weight for _, m in conv_modules(model)]
    for epoch in range(1, epochs + 1):
        model.train()
        perm = torch.randperm(len(x), generator=gen)
        for s in range(0, len(x), 100):
            idx = perm[s:s + 100]
            loss = F.cross_entropy(model(x[idx]), y[idx])
            if l1 > 0:
                loss = loss + l1 * sum(w.abs().sum() for w in convs)
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        if checkpoint is not None:
            checkpoint(epoch)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="fixtures")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--l1", type=float, default=1e-4)
    ap.add_argument("--lr", type=float, default=0.05)
    args = ap.parse_args()

    torch.manual_seed(0)
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    rng = np.random.default_rng(20240611)
    out = args.out
    if os.path.exists(out):
        shutil.rmtree(out)
    os.makedirs(out)

    conv1 = (rng.standard_normal((16, 3, 3, 3)) * 0.2).astype(np.float32)
    np.save(os.path.join(out, "conv1.npy"), conv1)
    conv1_checksum = 0.0
    for v in conv1.reshape(-1):
        conv1_checksum += float(v)

    templates = make_templates(rng)
    train_x, train_y = make_dataset(rng, 4000, templates, noise=1.2)
    eval_x, eval_y = make_dataset(rng, 2000, templates, noise=1.2)
    os.makedirs(os.path.join(out, "data"))
    np.save(os.path.join(out, "data", "images.npy"), eval_x)
    np.save(os.path.join(out, "data", "labels.npy"), eval_y)
    tx, ty = torch.from_numpy(train_x), torch.from_numpy(train_y)
    ex, ey = torch.from_numpy(eval_x), torch.from_numpy(eval_y)

    meta = {"conv1": {"shape": [16, 3, 3, 3], "checksum": conv1_checksum}}

    # plain model, short schedule
    net = TinyNet()
    train(net, tx, ty, epochs=20, l1=0.0, lr=args.lr)
    net.eval()
    ManifestWriter(net).save(os.path.join(out, "tinynet"), "tinynet")
    zip_snapshot(os.path.join(out, "tinynet"), os.path.join(out, "tinynet.zip"))
    net64 = TinyNet().double()
    net64.load_state_dict({k: v.double() if v.is_floating_point() else v for k, v in net.state_dict().items()})
    net64.eval()
    with torch.no_grad():
        ref = net64(ex[:32].double()).numpy()
    np.save(os.path.join(out, "reference_logits.npy"), ref)
    meta["tinynet"] = {
        "conv_layers": len(conv_modules(net)),
        "kernel_count": kernel_count(net),
        "torch_accuracy": accuracy(net, ex, ey),
        "reference_samples": 32,
        "numpy_masks": numpy_masks(net),
    }

    # L1-regularised run with checkpoints every ten epochs
    torch.manual_seed(1)
    l1net = TinyNet()
    series_dir = os.path.join(out, "tinynet-l1-series")
    series = []

    def checkpoint(epoch):
        if epoch % 10 == 0:
            l1net.eval()
            ManifestWriter(l1net).save(os.path.join(series_dir, "epoch_%03d" % epoch), "tinynet-l1@%d" % epoch)
            series.append({"epoch": epoch, "torch_accuracy": accuracy(l1net, ex, ey),
                           "numpy_masks": numpy_masks(l1net)})
            print("epoch", epoch, series[-1]["torch_accuracy"], series[-1]["numpy_masks"]["pruned_kernels"], flush=True)

    train(l1net, tx, ty, epochs=args.epochs, l1=args.l1, lr=args.lr, checkpoint=checkpoint)
    l1net.eval()
    ManifestWriter(l1net).save(os.path.join(out, "tinynet-l1"), "tinynet-l1")
    meta["tinynet-l1"] = {
        "conv_layers": len(conv_modules(l1net)),
        "kernel_count": kernel_count(l1net),
        "torch_accuracy": accuracy(l1net, ex, ey),
        "l1": args.l1,
        "epochs": args.epochs,
        "numpy_masks": numpy_masks(l1net),
    }
    meta["tinynet-l1-series"] = series

    with open(os.path.join(out, "fixtures.json"), "w") as f:
        json.dump(meta, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
