"""Independent numpy reference for the relevance-model goldens.

Writes model.wts (random weights), then golden.json holding, for a few fixed
source/target id sequences, the logits of every teacher-forced step and the
normalized per-token relevance (or `"degenerate": true` where no token has
positive relevance).  Run from this directory:

    python3 reference.py
"""

import json
import math

import numpy as np

LAYERS, HEADS, D, F, V = 2, 2, 8, 12, 16
EPS = 1e-6
LN_EPS = 1e-5
BOS = 0

rng = np.random.default_rng(20240611)


def uniform(shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def linear_params(out_dim, in_dim):
    return {"weight": uniform((out_dim, in_dim), 1 / math.sqrt(in_dim)), "bias": uniform((out_dim,), 0.1)}


def norm_params():
    return {"gain": rng.uniform(0.5, 1.5, size=(D,)), "bias": uniform((D,), 0.1)}


def attn_params():
    return {k: linear_params(D, D) for k in ("query", "key", "value", "output")}


def ffn_params():
    return {"inner": linear_params(F, D), "outer": linear_params(D, F)}


params = {"embedding": uniform((V, D), 1.0)}
params["enc"] = [
    {"self_attn": attn_params(), "norm1": norm_params(), "ffn": ffn_params(), "norm2": norm_params()}
    for _ in range(LAYERS)
]
params["dec"] = [
    {
        "self_attn": attn_params(),
        "norm1": norm_params(),
        "cross_attn": attn_params(),
        "norm2": norm_params(),
        "ffn": ffn_params(),
        "norm3": norm_params(),
    }
    for _ in range(LAYERS)
]
params["output"] = linear_params(V, D)


def tensors():
    yield "embedding", params["embedding"]
    for side, keys in (
        ("enc", ("self_attn", "norm1", "ffn", "norm2")),
        ("dec", ("self_attn", "norm1", "cross_attn", "norm2", "ffn", "norm3")),
    ):
        for l, layer in enumerate(params[side]):
            for key in keys:
                block = layer[key]
                if key.endswith("attn"):
                    for proj in ("query", "key", "value", "output"):
                        for part in ("weight", "bias"):
                            yield f"{side}.{l}.{key}.{proj}.{part}", block[proj][part]
                elif key == "ffn":
                    for proj in ("inner", "outer"):
                        for part in ("weight", "bias"):
                            yield f"{side}.{l}.{key}.{proj}.{part}", block[proj][part]
                else:
                    for part in ("gain", "bias"):
                        yield f"{side}.{l}.{key}.{part}", block[part]
    yield "output.weight", params["output"]["weight"]
    yield "output.bias", params["output"]["bias"]


def write_weights(path):
    with open(path, "w") as out:
        out.write("mtlens-weights 1\n")
        out.write(f"config layers {LAYERS} heads {HEADS} d_model {D} d_ff {F} vocab {V}\n")
        for name, t in tensors():
            out.write(f"tensor {name} {' '.join(str(s) for s in t.shape)}\n")
            rows = t if t.ndim == 2 else [t]
            for row in rows:
                out.write(" ".join(repr(float(x)) for x in row) + "\n")


# ---- forward -------------------------------------------------------------


def pos_enc(n):
    pe = np.zeros((n, D))
    for p in range(n):
        for c in range(D):
            angle = p / 10000 ** ((c // 2 * 2) / D)
            pe[p, c] = math.sin(angle) if c % 2 == 0 else math.cos(angle)
    return pe


def lin(p, x):
    return {"x": x, "z": x @ p["weight"].T + p["bias"]}


def layer_norm(p, s):
    mu = s.mean(axis=1, keepdims=True)
    var = ((s - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1 / np.sqrt(var + LN_EPS)
    return {"s": s, "y": p["gain"] * (s - mu) * inv + p["bias"], "inv": inv}


def attention(p, q_in, kv_in, causal):
    q, k, v = lin(p["query"], q_in), lin(p["key"], kv_in), lin(p["value"], kv_in)
    dh = D // HEADS
    ctx = np.zeros((q_in.shape[0], D))
    probs = []
    for h in range(HEADS):
        sl = slice(h * dh, (h + 1) * dh)
        scores = q["z"][:, sl] @ k["z"][:, sl].T / math.sqrt(dh)
        if causal:
            scores = np.where(np.triu(np.ones_like(scores), 1) > 0, -np.inf, scores)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        a = e / e.sum(axis=1, keepdims=True)
        probs.append(a)
        ctx[:, sl] = a @ v["z"][:, sl]
    o = lin(p["output"], ctx)
    return {"v": v, "probs": probs, "ctx": ctx, "o": o}


def ffn(p, x):
    inner = lin(p["inner"], x)
    outer = lin(p["outer"], np.maximum(inner["z"], 0))
    return {"inner": inner, "outer": outer}


def forward(src, prefix):
    x = params["embedding"][src] + pos_enc(len(src))
    enc = []
    for lp in params["enc"]:
        sa = attention(lp["self_attn"], x, x, False)
        n1 = layer_norm(lp["norm1"], x + sa["o"]["z"])
        ff = ffn(lp["ffn"], n1["y"])
        n2 = layer_norm(lp["norm2"], n1["y"] + ff["outer"]["z"])
        enc.append({"x": x, "sa": sa, "n1": n1, "ff": ff, "n2": n2})
        x = n2["y"]
    mem = x
    y = params["embedding"][prefix] + pos_enc(len(prefix))
    dec = []
    for lp in params["dec"]:
        sa = attention(lp["self_attn"], y, y, True)
        n1 = layer_norm(lp["norm1"], y + sa["o"]["z"])
        ca = attention(lp["cross_attn"], n1["y"], mem, False)
        n2 = layer_norm(lp["norm2"], n1["y"] + ca["o"]["z"])
        ff = ffn(lp["ffn"], n2["y"])
        n3 = layer_norm(lp["norm3"], n2["y"] + ff["outer"]["z"])
        dec.append({"x": y, "sa": sa, "n1": n1, "ca": ca, "n2": n2, "ff": ff, "n3": n3})
        y = n3["y"]
    out = lin(params["output"], y[-1:])
    return {"enc": enc, "mem": mem, "dec": dec, "out": out, "logits": out["z"][0]}


# ---- relevance -----------------------------------------------------------


def stab(z):
    return z + EPS * np.where(z >= 0, 1.0, -1.0)


def r_lin(p, c, r):
    # R_i = sum_j x_i w_ji / stab(z_j) R_j, written as an explicit contraction.
    return np.einsum("ni,ji,nj->ni", c["x"], p["weight"], r / stab(c["z"]))


def r_norm(p, c, r):
    return c["s"] * p["gain"] * c["inv"] / stab(c["y"]) * r


def r_res(a, b, r):
    q = r / stab(a + b)
    return a * q, b * q


def r_ffn(p, c, r):
    return r_lin(p["inner"], c["inner"], r_lin(p["outer"], c["outer"], r))


def r_attn(p, c, r):
    r_ctx = r_lin(p["output"], c["o"], r)
    dh = D // HEADS
    v = c["v"]["z"]
    r_v = np.zeros_like(v)
    for h in range(HEADS):
        sl = slice(h * dh, (h + 1) * dh)
        a = c["probs"][h]
        # contribution of value row j to context row i is a[i, j] * v[j]
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                r_v[j, sl] += a[i, j] * v[j, sl] / stab(c["ctx"][i, sl]) * r_ctx[i, sl]
    return r_lin(p["value"], c["v"], r_v)


def relevance(fw, target):
    r_logits = np.zeros((1, V))
    r_logits[0, target] = 1.0
    r_last = r_lin(params["output"], fw["out"], r_logits)
    t = fw["dec"][0]["x"].shape[0]
    r = np.zeros((t, D))
    r[-1] = r_last[0]
    r_mem = np.zeros_like(fw["mem"])
    for lp, c in reversed(list(zip(params["dec"], fw["dec"]))):
        r3 = r_norm(lp["norm3"], c["n3"], r)
        rh2, rf = r_res(c["n2"]["y"], c["ff"]["outer"]["z"], r3)
        rh2 = rh2 + r_ffn(lp["ffn"], c["ff"], rf)
        r2 = r_norm(lp["norm2"], c["n2"], rh2)
        rh1, rc = r_res(c["n1"]["y"], c["ca"]["o"]["z"], r2)
        r_mem = r_mem + r_attn(lp["cross_attn"], c["ca"], rc)
        r1 = r_norm(lp["norm1"], c["n1"], rh1)
        rx, rs = r_res(c["x"], c["sa"]["o"]["z"], r1)
        r = rx + r_attn(lp["self_attn"], c["sa"], rs)
    r_dec = r
    r = r_mem
    for lp, c in reversed(list(zip(params["enc"], fw["enc"]))):
        r2 = r_norm(lp["norm2"], c["n2"], r)
        rh1, rf = r_res(c["n1"]["y"], c["ff"]["outer"]["z"], r2)
        rh1 = rh1 + r_ffn(lp["ffn"], c["ff"], rf)
        r1 = r_norm(lp["norm1"], c["n1"], rh1)
        rx, rs = r_res(c["x"], c["sa"]["o"]["z"], r1)
        r = rx + r_attn(lp["self_attn"], c["sa"], rs)
    # token contribution: positive relevance summed over the token's input neurons
    src_pos = np.maximum(r, 0).sum(axis=1)
    tgt_pos = np.maximum(r_dec[1:], 0).sum(axis=1)
    clipped = np.concatenate([src_pos, tgt_pos])
    total = clipped.sum()
    if total <= 0:
        return None
    n = len(src_pos)
    return clipped[:n] / total, clipped[n:] / total


def top1(logits):
    return int(np.argmax(logits))  # first maximal index


CASES = [
    {"src": [4, 5, 6], "tgt": [7, 8, 9, 10]},
    {"src": [11], "tgt": [12, 13]},
    {"src": [15, 14, 4, 5, 6, 2], "tgt": [3, 9, 9, 1, 7]},
]


def main():
    write_weights("model.wts")
    golden = []
    for case in CASES:
        steps = []
        prefix = [BOS]
        for nxt in case["tgt"]:
            fw = forward(case["src"], prefix)
            target = top1(fw["logits"])
            rel = relevance(fw, target)
            step = {"logits": [float(x) for x in fw["logits"]], "predicted": target}
            if rel is None:
                step["degenerate"] = True
            else:
                step["source_rel"] = [float(x) for x in rel[0]]
                step["target_rel"] = [float(x) for x in rel[1]]
            steps.append(step)
            prefix.append(nxt)
        golden.append({"src": case["src"], "tgt": case["tgt"], "steps": steps})
    with open("golden.json", "w") as out:
        json.dump(golden, out, indent=1)
        out.write("\n")


if __name__ == "__main__":
    main()
