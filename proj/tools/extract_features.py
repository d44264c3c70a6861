#!/usr/bin/env python3
"""Precompute frozen transformer features for the `pretrained:<path>` encoder.

Reads one or more preprocessed split files (JSONL with a "tokens" field) and
writes one record per sentence:

    {"tokens": [...], "word_ids": [...], "features": [[...], ...]}

`word_ids` has one entry per subword, -1 for special tokens.
"""

import argparse
import json

import torch
from transformers import AutoModel, AutoTokenizer


def sentences(paths):
    seen = set()
    for path in paths:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                tokens = json.loads(line)["tokens"]
                key = "\x1f".join(tokens)
                if key not in seen:
                    seen.add(key)
                    yield tokens


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("inputs", nargs="+", help="preprocessed split files")
    ap.add_argument("--out", required=True)
    ap.add_argument("--model", default="roberta-base")
    ap.add_argument("--max-length", type=int, default=512)
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args()

    # RoBERTa-style BPE needs a prefix space for pre-split words.
    kwargs = {"add_prefix_space": True} if "roberta" in args.model else {}
    tokenizer = AutoTokenizer.from_pretrained(args.model, use_fast=True, **kwargs)
    model = AutoModel.from_pretrained(args.model).to(args.device).eval()

    with open(args.out, "w", encoding="utf-8") as out, torch.no_grad():
        for tokens in sentences(args.inputs):
            enc = tokenizer(tokens, is_split_into_words=True, truncation=False, return_tensors="pt")
            n = enc["input_ids"].shape[1]
            if n > args.max_length:
                raise SystemExit(f"{' '.join(tokens)[:60]}...: {n} subwords exceed {args.max_length}")
            hidden = model(**{k: v.to(args.device) for k, v in enc.items()}).last_hidden_state[0]
            word_ids = [-1 if w is None else w for w in enc.word_ids(0)]
            record = {"tokens": tokens, "word_ids": word_ids, "features": hidden.cpu().double().tolist()}
            out.write(json.dumps(record) + "\n")


if __name__ == "__main__":
    main()
