"""Smoke test for the egostream extension module.

Run after `pip install -e crates/py --no-build-isolation`.
"""

import math
import pathlib
import random
import tempfile

import egostream

FIXTURES = pathlib.Path(__file__).resolve().parents[3] / "fixtures"
COOKING = FIXTURES / "cooking"


def check_timestamp():
    assert egostream.format_timestamp(58.0) == "58.0s"


def check_memory_log():
    log = egostream.MemoryLog("smoke")
    log.append(1.0, 5.0, "cuts the onion", [1.0, 0.0])
    log.append(6.0, 10.0, "adds sugar", [0.0, 1.0])
    assert len(log) == 2
    assert [e["description"] for e in log.query_by_time(7.0, 8.0)] == ["adds sugar"]
    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "log.jsonl"
        log.persist(path)
        assert egostream.MemoryLog.load(path).entries() == log.entries()


def check_retrieval():
    rng = random.Random(3)
    rows = []
    for i in range(200):
        v = [rng.uniform(-1, 1) for _ in range(16)]
        n = math.sqrt(sum(x * x for x in v))
        rows.append((f"v{i:03}", [x / n for x in v]))
    index = egostream.RetrievalIndex.from_vectors(16, rows)
    hits = index.search_vector(rows[42][1], 3)
    assert hits[0]["video_id"] == "v042"
    assert len(hits) == 3


def check_assistant():
    a = egostream.Assistant(
        annotations=COOKING / "annotations.jsonl",
        qa=COOKING / "qa.jsonl",
        transcript=COOKING / "transcript.txt",
    )
    entries = a.replay(COOKING / "cooking_120s.json", rate=20.0)
    assert 23 <= entries <= 24, entries
    answer = a.ask("When did I add sugar?")
    assert "58.0s" in answer["text"], answer["text"]
    hits = a.ground("when did I add sugar and crack the egg")
    assert [h["display"] for h in hits] == ["58.0s", "13.0s"]
    clip = a.ask("show me what the next action looks like")
    assert clip["media"]["clip"]["duration_s"] == 2.0


def main():
    check_timestamp()
    check_memory_log()
    check_retrieval()
    check_assistant()
    print("smoke test ok")


if __name__ == "__main__":
    main()
