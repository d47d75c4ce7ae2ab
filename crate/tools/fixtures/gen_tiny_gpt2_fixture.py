"""Regenerate the tiny GPT-2 checkpoint and its golden activations.

The reference values come from HuggingFace `transformers`' GPT-2 implementation,
with interventions applied through a forward pre-hook on each block's `attn.c_proj`
(the concatenated per-head outputs before the output projection).
"""
import json
import re
from pathlib import Path

import torch
from safetensors.torch import save_file
from transformers import GPT2Config, GPT2LMHeadModel

ROOT = Path(__file__).resolve().parents[2]
OUT = ROOT / "crates/core/tests/data"

torch.manual_seed(42)
cfg = GPT2Config(vocab_size=96, n_positions=32, n_embd=32, n_layer=2, n_head=4,
                 n_inner=128, activation_function="gelu_new", layer_norm_epsilon=1e-5,
                 resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0, initializer_range=0.2)
cfg._attn_implementation = "eager"
model = GPT2LMHeadModel(cfg).eval()
with torch.no_grad():
    for name, p in model.named_parameters():
        if name.endswith("ln_1.weight") or name.endswith("ln_2.weight") or name.endswith("ln_f.weight"):
            p.copy_(1.0 + 0.3 * torch.randn_like(p))
        elif "ln_" in name and name.endswith("bias"):
            p.copy_(0.1 * torch.randn_like(p))
        elif name.endswith("bias"):
            p.copy_(0.05 * torch.randn_like(p))

tensors = {k: v.contiguous() for k, v in model.transformer.state_dict().items()
           if not re.fullmatch(r"h\.\d+\.attn\.(masked_)?bias", k)}
save_file(tensors, str(OUT / "tiny_gpt2.safetensors"), metadata={"format": "pt"})

H, DH = cfg.n_head, cfg.n_embd // cfg.n_head
patches = {}  # layer -> list of (head, tensor [seq, d_head] or None for zero)
captured = {}


def make_hook(layer):
    def hook(module, args):
        (x,) = args  # [batch, seq, d_model]
        captured[layer] = x[0].detach().clone()
        if layer in patches:
            x = x.clone()
            for head, value in patches[layer]:
                sl = slice(head * DH, (head + 1) * DH)
                x[0, :, sl] = 0.0 if value is None else value
            return (x,)
    return hook


for i, block in enumerate(model.transformer.h):
    block.attn.c_proj.register_forward_pre_hook(make_hook(i))


def run(tokens):
    captured.clear()
    with torch.no_grad():
        out = model(torch.tensor([tokens]), output_attentions=True)
    z = {l: captured[l].reshape(len(tokens), H, DH) for l in captured}
    return out.logits[0], [a[0] for a in out.attentions], z


tokens_a = [5, 17, 42, 8, 63, 17, 91, 3, 27, 11]
tokens_b = [5, 17, 42, 8, 63, 42, 91, 3, 27, 11]

logits_a, attn_a, z_a = run(tokens_a)
logits_b, attn_b, z_b = run(tokens_b)

patches = {1: [(2, z_a[1][:, 2, :])]}
patched_single, _, _ = run(tokens_b)
patches = {0: [(1, z_a[0][:, 1, :])], 1: [(3, z_a[1][:, 3, :])]}
patched_pair, _, _ = run(tokens_b)
patches = {0: [(0, None)], 1: [(1, None)]}
zero_ablated, _, _ = run(tokens_a)
patches = {}

golden = {
    "tokens_a": tokens_a,
    "tokens_b": tokens_b,
    "logits_a": logits_a.tolist(),
    "final_logits_b": logits_b[-1].tolist(),
    "attention_a": [a.tolist() for a in attn_a],
    "z_a": [z_a[l].tolist() for l in range(cfg.n_layer)],
    "patched_b_l1h2_from_a": patched_single[-1].tolist(),
    "patched_b_l0h1_l1h3_from_a": patched_pair[-1].tolist(),
    "zero_ablated_a_l0h0_l1h1": zero_ablated[-1].tolist(),
}
(OUT / "tiny_gpt2_golden.json").write_text(json.dumps(golden))
print("ok", {k: v.shape for k, v in tensors.items() if k.startswith("h.0") or "." not in k[:3]})
