#!/usr/bin/env python3
"""Sentence embeddings from GloVe 6B 100d word vectors.

A sentence vector is the L2-normalized sum of its in-vocabulary whitespace
tokens after "all-but-the-top" post-processing: the mean of the 50k most
frequent words is subtracted and the top 3 principal directions of that set
are projected out. Out-of-vocabulary tokens are skipped.

Word vectors come from the npm package `wink-embeddings-sg-100d`
(GloVe, PDDL). Fetch it with:

    npm pack wink-embeddings-sg-100d && tar xzf wink-embeddings-sg-100d-*.tgz

Subcommands:

    fixtures VECTORS SENTENCES... [--out DIR]
        Write one replay fixture per sentence (one sentence per line in each
        SENTENCES file) for the provider `remote:MODEL:100`.
    serve VECTORS [--port N]
        Answer `POST /v1/embeddings` with {"model", "input"} bodies.
    scores VECTORS KB_FILE QUERY...
        Print the cosine of each query against each KB sentence.
"""

import argparse
import hashlib
import json
import os
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

MODEL = "glove-6b-100d-mean-abtt3"
DIMENSION = 100
TOP_WORDS = 50_000
REMOVED_COMPONENTS = 3


def provider_id():
    return f"remote:{MODEL}:{DIMENSION}"


def content_hash(parts):
    h = hashlib.sha256()
    for part in parts:
        b = part.encode("utf-8")
        h.update(len(b).to_bytes(8, "little"))
        h.update(b)
    return h.hexdigest()


class Embedder:
    def __init__(self, path):
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        vectors = raw["vectors"]
        self.words = {w: np.array(v[:DIMENSION], dtype=np.float64) for w, v in vectors.items()}
        top = [w for w in raw["words"][:TOP_WORDS] if w in self.words]
        m = np.stack([self.words[w] for w in top])
        self.mean = m.mean(axis=0)
        _, _, vt = np.linalg.svd(m - self.mean, full_matrices=False)
        self.components = vt[:REMOVED_COMPONENTS]

    def word(self, token):
        x = self.words[token] - self.mean
        return x - self.components.T @ (self.components @ x)

    def embed(self, sentence):
        vs = [self.word(t) for t in sentence.split() if t in self.words]
        if not vs:
            raise ValueError(f"no in-vocabulary tokens in {sentence!r}")
        s = np.sum(vs, axis=0)
        return s / np.linalg.norm(s)


def read_sentences(paths):
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as f:
            out.extend(line.strip() for line in f if line.strip() and not line.startswith("#"))
    return list(dict.fromkeys(out))


def cmd_fixtures(args):
    emb = Embedder(args.vectors)
    os.makedirs(args.out, exist_ok=True)
    pid = provider_id()
    for s in read_sentences(args.sentences):
        record = {"provider_id": pid, "sentence": s, "vector": [float(x) for x in emb.embed(s)]}
        path = os.path.join(args.out, content_hash([pid, s]) + ".json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(record, f, indent=2)
            f.write("\n")
        print(f"{path}  {s}")


def cmd_serve(args):
    emb = Embedder(args.vectors)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers.get("content-length", 0))))
            if not self.path.rstrip("/").endswith("/embeddings") or body.get("model") != MODEL:
                self.send_error(404)
                return
            try:
                data = [
                    {"object": "embedding", "index": i, "embedding": [float(x) for x in emb.embed(s)]}
                    for i, s in enumerate(body["input"])
                ]
            except ValueError as e:
                payload = json.dumps({"error": str(e)}).encode()
                self.send_response(400)
            else:
                payload = json.dumps({"object": "list", "model": MODEL, "data": data}).encode()
                self.send_response(200)
            self.send_header("content-type", "application/json")
            self.send_header("content-length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    server = ThreadingHTTPServer(("127.0.0.1", args.port), Handler)
    print(f"serving {MODEL} on http://127.0.0.1:{args.port}/v1", file=sys.stderr)
    server.serve_forever()


def cmd_scores(args):
    emb = Embedder(args.vectors)
    kb = read_sentences([args.kb])
    for q in args.queries:
        qv = emb.embed(q)
        scored = sorted(((float(emb.embed(k) @ qv), k) for k in kb), reverse=True)
        print(f"== {q}")
        for score, k in scored:
            print(f"  {score:.4f} {k}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)
    f = sub.add_parser("fixtures")
    f.add_argument("vectors")
    f.add_argument("sentences", nargs="+")
    f.add_argument("--out", default="fixtures/embeddings")
    f.set_defaults(run=cmd_fixtures)
    s = sub.add_parser("serve")
    s.add_argument("vectors")
    s.add_argument("--port", type=int, default=8765)
    s.set_defaults(run=cmd_serve)
    c = sub.add_parser("scores")
    c.add_argument("vectors")
    c.add_argument("kb")
    c.add_argument("queries", nargs="+")
    c.set_defaults(run=cmd_scores)
    args = ap.parse_args()
    args.run(args)


if __name__ == "__main__":
    main()
