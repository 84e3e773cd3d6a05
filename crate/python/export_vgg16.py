"""Exports torchvision's ImageNet VGG-16 convolution weights for the perceptual loss.

Needs torch, torchvision and safetensors plus network access the first time.
Writes `features.{i}.weight/bias` tensors; point `GFD_CACHE` at the output
directory or pass the file through `model.perceptual.weights`.
"""

import argparse
from pathlib import Path

import torchvision
from safetensors.torch import save_file


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(".gfd-cache") / "vgg16_features.safetensors")
    args = ap.parse_args()
    vgg = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)
    tensors = {f"features.{k}": v.contiguous() for k, v in vgg.features.state_dict().items()}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(args.out))
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
