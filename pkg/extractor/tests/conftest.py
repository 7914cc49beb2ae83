"""Tiny backbones built from configs; no network, no pretrained weights."""

import numpy as np
import pytest
import torch
from PIL import Image
from tokenizers import pre_tokenizers
from transformers import (
    CLIPConfig,
    CLIPModel,
    CLIPTextConfig,
    CLIPTokenizer,
    CLIPVisionConfig,
    Dinov2Config,
    Dinov2Model,
)


def _tiny_tokenizer() -> CLIPTokenizer:
    # byte-level alphabet, each char also with the end-of-word marker,
    # plus the two CLIP specials; no merges (pure char-level BPE)
    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {}
    for ch in alphabet:
        vocab[ch] = len(vocab)
    for ch in alphabet:
        vocab[ch + "</w>"] = len(vocab)
    for special in ("<|startoftext|>", "<|endoftext|>"):
        vocab[special] = len(vocab)
    return CLIPTokenizer(vocab=vocab, merges=[])


@pytest.fixture(scope="session")
def tiny_clip_dir(tmp_path_factory):
    torch.manual_seed(0)
    tok = _tiny_tokenizer()
    cfg = CLIPConfig(
        text_config=CLIPTextConfig(
            hidden_size=16,
            intermediate_size=32,
            num_hidden_layers=2,
            num_attention_heads=2,
            vocab_size=tok.vocab_size,
            bos_token_id=tok.bos_token_id,
            eos_token_id=tok.eos_token_id,
            max_position_embeddings=77,
        ),
        vision_config=CLIPVisionConfig(
            hidden_size=20,
            intermediate_size=40,
            num_hidden_layers=2,
            num_attention_heads=2,
            patch_size=16,
            image_size=32,
        ),
        projection_dim=12,
    )
    path = tmp_path_factory.mktemp("tiny_clip")
    model = CLIPModel(cfg).eval()
    model.save_pretrained(path)
    tok.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def tiny_context_dir(tmp_path_factory):
    torch.manual_seed(1)
    cfg = Dinov2Config(
        hidden_size=24,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=48,
        patch_size=16,
        image_size=32,
    )
    model = Dinov2Model(cfg).eval()
    # zeroed positions make equal-valued patches produce equal tokens, so
    # token order is observable from patch content alone
    model.embeddings.position_embeddings.data.zero_()
    path = tmp_path_factory.mktemp("tiny_dino")
    model.save_pretrained(path)
    return str(path)


@pytest.fixture()
def checkerboard_png(tmp_path):
    """64x64 image of 16px black/white patches, white at even (row+col)."""
    cell = np.indices((4, 4)).sum(axis=0) % 2 == 0
    img = np.repeat(np.repeat(np.where(cell, 255, 0), 16, 0), 16, 1)
    path = tmp_path / "checker.png"
    Image.fromarray(img.astype(np.uint8)).convert("RGB").save(path)
    return path, cell.astype(np.uint8)


@pytest.fixture()
def classes_json(tmp_path):
    path = tmp_path / "classes.json"
    path.write_text(
        '[{"name": "water", "synonyms": ["river"]}, {"name": "road", "synonyms": []}]'
    )
    return path
