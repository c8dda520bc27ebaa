"""Writes 20 clean/degraded WAV pairs and their pystoi scores.

Run from this directory: python3 gen_stoi_fixtures.py
"""
import json

import numpy as np
from pystoi import stoi
from scipy.io import wavfile

FS = 16000


def speechlike(rng, seconds):
    t = np.arange(int(seconds * FS)) / FS
    f0 = 110 + 40 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t)
    phase = 2 * np.pi * np.cumsum(f0) / FS
    env = np.clip(np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 6)), 0, None) ** 2
    x = sum(np.sin(h * phase) / h for h in range(1, 12))
    x = x + 0.1 * rng.standard_normal(len(t))
    return 0.2 * env * x / np.max(np.abs(x))


def degrade(rng, x, i):
    kind = i % 4
    if kind == 0:
        snr = [-5, 0, 5, 10, 20][i // 4 % 5]
        n = rng.standard_normal(len(x))
    elif kind == 1:
        snr = [-3, 2, 8][i % 3]
        n = np.convolve(rng.standard_normal(len(x)), np.ones(8) / 8, mode="same")
    elif kind == 2:
        snr = None
        y = np.convolve(x, np.ones(24) / 24, mode="same")
        return y + 0.002 * rng.standard_normal(len(x))
    else:
        snr = [0, 6][i % 2]
        n = np.sin(2 * np.pi * 1000 * np.arange(len(x)) / FS) * (1 + rng.standard_normal(len(x)) * 0.2)
    n = n * np.sqrt(np.sum(x ** 2) / np.sum(n ** 2) / 10 ** (snr / 10))
    return x + n


def to_i16(x):
    return np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16)


def main():
    rng = np.random.default_rng(2024)
    scores = []
    for i in range(20):
        x = to_i16(speechlike(rng, rng.uniform(1.2, 2.0)))
        y = to_i16(degrade(rng, x / 32768.0, i))
        wavfile.write(f"stoi/{i:02d}_clean.wav", FS, x)
        wavfile.write(f"stoi/{i:02d}_degraded.wav", FS, y)
        s = stoi(x / 32768.0, y / 32768.0, FS, extended=False)
        scores.append({"index": i, "stoi": float(s)})
    with open("stoi/reference.json", "w") as f:
        json.dump(scores, f, indent=1)


if __name__ == "__main__":
    main()
