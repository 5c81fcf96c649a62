"""Reference values for the seed-0 toy attention layer and encoder.

Reads ../numeric_inputs.json and writes ../numeric_oracle.json.
"""

import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent.parent


def matrix(obj):
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["dim"])


def main():
    inputs = json.loads((HERE / "numeric_inputs.json").read_text())
    image = np.asarray(inputs["image"], dtype=np.float64)
    text = np.asarray(inputs["text"], dtype=np.float64)
    w_q = np.asarray(inputs["w_q"], dtype=np.float64)
    w_k = np.asarray(inputs["w_k"], dtype=np.float64)
    w_v = np.asarray(inputs["w_v"], dtype=np.float64)

    q, k, v = image @ w_q, text @ w_k, text @ w_v
    logits = q @ k.T / np.sqrt(w_q.shape[1])
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    attn = shifted / shifted.sum(axis=1, keepdims=True)
    features = attn @ v

    h = np.asarray(inputs["encoder_input"], dtype=np.float64)
    layers = inputs["encoder"]["layers"]
    for i, layer in enumerate(layers):
        z = matrix(layer["weights"]) @ h + np.asarray(layer["bias"]["data"], dtype=np.float64)
        h = z if i == len(layers) - 1 else np.tanh(z)
    encoder_output = [h[0], h[1], np.exp(h[2])]

    out = {
        "logits": logits.tolist(),
        "map": attn.tolist(),
        "features": features.tolist(),
        "encoder_output": [float(x) for x in encoder_output],
    }
    (HERE / "numeric_oracle.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
