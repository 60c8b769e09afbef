"""Convert an OpenAI CLIP checkpoint into handid's pretrained format.

Writes `weights.safetensors` (tensor names unchanged, float32) and
`backbone.json` (architecture plus pretokenized prompt templates).

    python python/convert_clip.py ViT-B-16.pt out/vit-b16 \
        --tokenizer openai/clip-vit-base-patch16

Needs torch, safetensors and transformers (for the tokenizer).
"""

import argparse
import json
from pathlib import Path

import torch
from safetensors.torch import save_file

DEFAULT_TEMPLATES = ["A photo of a * hand"]
PLACEHOLDER = "*"


def load_state_dict(path: Path) -> dict:
    try:
        model = torch.jit.load(str(path), map_location="cpu")
        return model.state_dict()
    except RuntimeError:
        sd = torch.load(str(path), map_location="cpu")
        return sd.get("state_dict", sd)


def count_blocks(sd: dict, prefix: str) -> int:
    return len({k.split(".")[len(prefix.split("."))] for k in sd if k.startswith(prefix + ".")})


def vision_config(sd: dict) -> dict:
    if "visual.proj" in sd:
        width = sd["visual.conv1.weight"].shape[0]
        patch = sd["visual.conv1.weight"].shape[-1]
        grid = round((sd["visual.positional_embedding"].shape[0] - 1) ** 0.5)
        return {
            "kind": "vit",
            "image_size": patch * grid,
            "patch_size": patch,
            "width": width,
            "layers": count_blocks(sd, "visual.transformer.resblocks"),
            "heads": width // 64,
        }
    width = sd["visual.layer1.0.conv1.weight"].shape[0]
    grid = round((sd["visual.attnpool.positional_embedding"].shape[0] - 1) ** 0.5)
    return {
        "kind": "resnet",
        "image_size": grid * 32,
        "layers": [count_blocks(sd, f"visual.layer{b}") for b in range(1, 5)],
        "width": width,
        "heads": width * 32 // 64,
    }


def text_config(sd: dict) -> dict:
    width = sd["ln_final.weight"].shape[0]
    return {
        "vocab_size": sd["token_embedding.weight"].shape[0],
        "context_length": sd["positional_embedding"].shape[0],
        "width": width,
        "layers": count_blocks(sd, "transformer.resblocks"),
        "heads": width // 64,
    }


def pretokenize(tokenizer_name: str, templates: list) -> dict:
    from transformers import CLIPTokenizer

    tok = CLIPTokenizer.from_pretrained(tokenizer_name)
    placeholder_ids = tok(PLACEHOLDER)["input_ids"][1:-1]
    if len(placeholder_ids) != 1:
        raise SystemExit(f"placeholder {PLACEHOLDER!r} is not a single token")
    out = {}
    for template in templates:
        ids = tok(template)["input_ids"]
        hits = [i for i, t in enumerate(ids) if t == placeholder_ids[0]]
        if len(hits) != 1:
            raise SystemExit(f"template {template!r} must contain exactly one {PLACEHOLDER!r}")
        out[template] = {"ids": ids, "placeholder_index": hits[0]}
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--tokenizer", required=True, help="name or path for transformers' CLIPTokenizer")
    ap.add_argument("--name", default=None)
    ap.add_argument("--template", action="append", default=None)
    args = ap.parse_args()

    sd = load_state_dict(args.checkpoint)
    tensors = {k: v.detach().float().contiguous() for k, v in sd.items() if k not in {"input_resolution", "context_length", "vocab_size"}}
    config = {
        "name": args.name or args.checkpoint.stem,
        "embed_dim": sd["text_projection"].shape[1],
        "vision": vision_config(sd),
        "text": text_config(sd),
        "templates": pretokenize(args.tokenizer, args.template or DEFAULT_TEMPLATES),
    }
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(args.out_dir / "weights.safetensors"))
    (args.out_dir / "backbone.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"wrote {len(tensors)} tensors to {args.out_dir}")


if __name__ == "__main__":
    main()
