#!/usr/bin/env python3
"""Reference external reranker: echoes first-stage scores back.

Reads one JSON object per line ({qid, docno, query, text, first_stage_score})
from stdin and writes {qid, docno, score} lines to stdout. Plug any scorer in
by keeping this protocol.
"""
import json
import sys


def main() -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        candidate = json.loads(line)
        print(json.dumps({
            "qid": candidate["qid"],
            "docno": candidate["docno"],
            "score": candidate["first_stage_score"],
        }))


if __name__ == "__main__":
    main()
