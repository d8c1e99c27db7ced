#!/usr/bin/env python3
"""Writes the recorded provider-protocol exchanges under tests/fixtures/protocol/.

Each file is {"name", "request": {"method", "path", "body"}, "response": {"status", "body"}}.
The C++ client tests replay them from an in-process HTTP server; a service
implementation can be checked against the same request/response shapes.

    python3 tests/oracle/make_protocol_fixtures.py
"""

import base64
import json
import struct
import zlib
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "protocol"
DIM = 4


def png_rgb(width, height, pixel):
    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + b"".join(bytes(pixel(x, y)) for x in range(width)) for y in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def fixture(name, method, path, body, status, response):
    return {"name": name, "request": {"method": method, "path": path, "body": body},
            "response": {"status": status, "body": response}}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    image = png_rgb(2, 2, lambda x, y: (255 * x, 255 * y, 128))
    image_b64 = base64.b64encode(image).decode()
    long_text = " ".join(["word"] * 200)
    fixtures = [
        fixture("manifest", "GET", "/v1/manifest", None, 200,
                {"provider_id": "fixture-clip", "embedding_dim": DIM, "max_text_tokens": 77,
                 "supports": ["text-embed", "token-embed", "image-embed", "imagine"]}),
        fixture("embed_text", "POST", "/v1/embed/text", {"texts": ["a photo of a cat", "a dog"], "tokens": False}, 200,
                {"provider_id": "fixture-clip", "embeddings": [[0.5, 0.5, 0.5, 0.5], [0.25, -0.5, 0.75, 0.125]]}),
        fixture("embed_text_tokens", "POST", "/v1/embed/text", {"texts": ["a cat"], "tokens": True}, 200,
                {"provider_id": "fixture-clip", "embeddings": [[1.0, 0.0, 0.0, 0.0]],
                 "token_embeddings": [{"tokens": ["a", "cat"],
                                       "vectors": [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]}]}),
        fixture("embed_image", "POST", "/v1/embed/image", {"png_b64": image_b64}, 200,
                {"embedding": [0.1, 0.2, 0.3, 0.4]}),
        fixture("imagine", "POST", "/v1/imagine", {"text": "a red bird", "steps": 10, "seed": 7}, 200,
                {"png_b64": image_b64, "image_embedding": [0.0, 0.6, 0.8, 0.0],
                 "initial_loss": -0.125, "final_loss": -0.875}),
        fixture("imagine_non_improving", "POST", "/v1/imagine", {"text": "a stubborn bird", "steps": 10, "seed": 7}, 200,
                {"png_b64": image_b64, "image_embedding": [0.0, 0.0, 0.6, 0.8],
                 "initial_loss": -0.5, "final_loss": -0.25}),
        fixture("over_length", "POST", "/v1/embed/text", {"texts": [long_text], "tokens": False}, 400,
                {"error": "text needs 202 tokens; the CLIP text encoder accepts at most 77 tokens"}),
        fixture("malformed", "POST", "/v1/embed/text", {"texts": "not a list", "tokens": False}, 422,
                {"error": "texts must be a list of strings"}),
        fixture("busy", "POST", "/v1/imagine", {"text": "busy", "steps": 10, "seed": 7}, 503,
                {"error": "generation slot unavailable"}),
    ]
    for f in fixtures:
        with open(OUT / f"{f['name']}.json", "w") as fh:
            json.dump(f, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"{len(fixtures)} fixtures")


if __name__ == "__main__":
    main()
