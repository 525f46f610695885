"""Builds the mock-backend fixture sets used by the CLI and acceptance tests.

A mock backend serves replies from files named by request cache key, so
the builder mirrors the exact requests the pipeline will issue (same
templates, same serialization, same sampling parameters) and writes one
reply file per key plus a human-readable index.

Regenerate the committed fixtures with:

    python -m tests.fixture_builder
"""

import json
from pathlib import Path

from capscore.decompose import build_decomposition_prompt, parse_units
from capscore.feedquill import stable_offset
from capscore.gateway import BackendSpec, ChatRequest, ResponseStore, SamplingParams, request_key
from capscore.match import build_matching_prompt
from capscore.prompts import prompt_pool
from capscore.units import OracleSet
from capscore.verify import build_verification_prompt, statement_prompt

JUDGE_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0)

FIXTURES_ROOT = Path(__file__).parent / "fixtures"


class MockWriter:
    """Writes keyed replies for one mock backend and keeps the index."""

    def __init__(self, root: Path, name: str):
        self.spec = BackendSpec(
            name=name, kind="mock-fixture", model_id=f"mock-{name}",
            fixtures_dir=str(root / "mock" / name),
        )
        self.store = ResponseStore(self.spec.fixtures_dir)
        self.index: dict[str, dict] = {}

    def put(self, req: ChatRequest, reply: str, purpose: str) -> None:
        key = request_key(self.spec, req)
        self.store.put(key, reply)
        self.index[key] = {
            "backend": self.spec.name,
            "purpose": purpose,
            "user_preview": req.user[:100].replace("\n", " "),
            "seed": req.sampling.seed,
        }

    def put_json(self, req: ChatRequest, reply, purpose: str) -> None:
        self.put(req, json.dumps(reply, ensure_ascii=False), purpose)

    def flush_index(self) -> None:
        path = Path(self.spec.fixtures_dir) / "index.json"
        path.write_text(
            json.dumps(self.index, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


def judge_request(prompt: str) -> ChatRequest:
    return ChatRequest(user=prompt, decode="json-expected", sampling=JUDGE_SAMPLING)


# -- scoring fixture set -------------------------------------------------------

# per sample: (sample_id, system, caption, decomposition records,
#              oracle caption, oracle unit records, match ids, verdicts)
SCORE_SAMPLES = [
    (
        "s1", "model-a",
        "A red cat sits on a mat. The scene feels cozy.",
        [
            {"fact": "there is a cat", "identifier": "cat_1", "relevance": 1},
            {"fact": "the cat is red", "identifier": "cat_1", "relevance": 1},
            {"fact": "the cat sits on a mat", "identifier": "cat_1", "relevance": 1},
            {"fact": "the scene feels cozy", "identifier": None, "relevance": 0},
        ],
        "A black cat sits on a blue mat indoors.",
        [
            {"id": "o1", "fact": "there is a cat", "identifier": "cat_1", "relevance": 1},
            {"id": "o2", "fact": "the cat sits on a mat", "identifier": "cat_1", "relevance": 1},
            {"id": "o3", "fact": "the mat is blue", "identifier": "mat_1", "relevance": 1},
            {"id": "o4", "fact": "the setting is indoors", "identifier": None, "relevance": 0},
        ],
        ["o1", "None", "o2", "None"],
        [1, 0, 1, 1],
    ),
    (
        "s2", "model-a",
        "A dog runs in a park.",
        [
            {"fact": "there is a dog", "identifier": "dog_1", "relevance": 1},
            {"fact": "the dog is running", "identifier": "dog_1", "relevance": 1},
            {"fact": "the setting is a park", "identifier": None, "relevance": 1},
        ],
        "A dog is running through a park.",
        [
            {"id": "o1", "fact": "there is a dog", "identifier": "dog_1", "relevance": 1},
            {"id": "o2", "fact": "the dog is running", "identifier": "dog_1", "relevance": 1},
            {"id": "o3", "fact": "the setting is a park", "identifier": None, "relevance": 1},
        ],
        ["o1", "o2", "o3"],
        [1, 1, 1],
    ),
    (
        "s3", "model-a",
        "Two elephants swim in the ocean.",
        [
            {"fact": "there are two elephants", "identifier": None, "relevance": 1},
            {"fact": "the elephants are swimming", "identifier": None, "relevance": 1},
        ],
        "An empty sandy beach at sunset.",
        [
            {"id": "o1", "fact": "there is a sandy beach", "identifier": "beach_1", "relevance": 1},
            {"id": "o2", "fact": "the beach is empty", "identifier": "beach_1", "relevance": 1},
        ],
        ["None", "None"],
        [0, 0],
    ),
    (
        "s4", "model-b",
        "A man stands in the rain. Another man appears.",
        [
            {"fact": "there is a man", "identifier": "man_1", "relevance": 1},
            {"fact": "another man is present", "identifier": "man_2", "relevance": 1},
            {"fact": "it is raining", "identifier": None, "relevance": 1},
        ],
        "A lone man stands beneath a tree.",
        [
            {"id": "o1", "fact": "a man is standing", "identifier": "man_1", "relevance": 1},
            {"id": "o2", "fact": "there is a tree", "identifier": "tree_1", "relevance": 1},
        ],
        ["o1", "o1", "None"],
        [1, 1, 0],
    ),
    (
        "s5", "model-b",
        "A lighthouse by the sea, suggesting a maritime scene.",
        [
            {"fact": "there is a lighthouse", "identifier": "lighthouse_1", "relevance": 1},
            {"fact": "the scene suggests maritime navigation", "identifier": None, "relevance": 0},
        ],
        "A lighthouse stands over the sea; the mood is nautical.",
        [
            {"id": "o1", "fact": "there is a lighthouse", "identifier": "lighthouse_1", "relevance": 1},
            {"id": "o2", "fact": "the mood is nautical", "identifier": None, "relevance": 0},
        ],
        ["o1", "None"],
        [1, 1],
    ),
]

# frozen hand-computed final scores per sample (see the arithmetic in
# test_cli.py); kept here so both the CLI test and acceptance share them
EXPECTED_FINAL_F = {
    "s1": 2 / 3,
    "s2": 1.0,
    "s3": 0.0,
    "s4": 4 / 7,
    "s5": 0.9,
}


def build_score_fixtures(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    judge = MockWriter(root, "judge")

    samples = []
    oracle_rows = []
    for sample_id, system, caption, decomp, ref_caption, oracle_units, match_ids, verdicts \
            in SCORE_SAMPLES:
        samples.append({
            "sample_id": sample_id,
            "image_ref": None,
            "prompt": "Describe this image in detail.",
            "caption": caption,
            "system_tag": system,
        })
        oracle_rows.append({
            "sample_id": sample_id,
            "caption": ref_caption,
            "units": oracle_units,
        })

        judge.put_json(judge_request(build_decomposition_prompt(caption)), decomp,
                       f"decomposition of {sample_id}")

        pred = parse_units(decomp, source_caption=caption)
        oracle = OracleSet.from_records(oracle_units, source_caption=ref_caption)
        match_reply = [
            {"fact": u.fact, "identifier": u.identifier, "matched_oracle_id": mid}
            for u, mid in zip(pred.units, match_ids)
        ]
        judge.put_json(judge_request(build_matching_prompt(pred, oracle)), match_reply,
                       f"matching of {sample_id}")

        verify_reply = [
            {"fact": u.fact, "identifier": u.identifier, "verification": v}
            for u, v in zip(pred.units, verdicts)
        ]
        judge.put_json(judge_request(build_verification_prompt(pred, ref_caption)),
                       verify_reply, f"verification of {sample_id}")

    judge.flush_index()
    _write_jsonl(root / "samples.jsonl", samples)
    _write_jsonl(root / "oracles.jsonl", oracle_rows)
    (root / "config.yaml").write_text(
        "seed: 0\n"
        "cache_dir: ${CAPSCORE_CACHE}\n"
        "max_workers: 4\n"
        "backends:\n"
        "  - name: judge\n"
        "    kind: mock-fixture\n"
        "    model_id: mock-judge\n"
        "    fixtures_dir: mock/judge\n"
        "roster:\n"
        "  decompose: judge\n"
        "  match: judge\n"
        "  verify: judge\n",
        encoding="utf-8",
    )


# -- preference fixture set ----------------------------------------------------

# candidate text -> (unit facts, per-unit ensemble verdicts)
PREF_CANDIDATES = {
    "t1": [
        ("A tall ship sails across the bay.",
         [("there is a tall ship", True), ("the ship sails in a bay", True)]),
        ("A ship floats near dark rocks.",
         [("there is a ship", True), ("the ship is near rocks", False)]),
        ("Five boats race beneath a lightning storm.",
         [("there are five boats", True), ("the boats are racing", True),
          ("there is a storm", False), ("there is lightning", False),
          ("the sky is dark", False)]),
    ],
    "t2": [
        ("A cat.", [("there is a cat", True)]),
        ("A cat rests on a sofa.",
         [("there is a cat", True), ("the cat rests on a sofa", True)]),
        ("A dog.", [("there is a dog", False)]),
    ],
}

PREF_PROMPTS = {
    "t1": "What do you see happening in this image?",
    # t2 ships with an empty prompt so the pool default kicks in
    "t2": "",
}


def resolved_prompt(sample_id: str) -> str:
    prompt = PREF_PROMPTS[sample_id]
    if prompt:
        return prompt
    pool = prompt_pool()
    return pool[stable_offset(sample_id) % len(pool)]


def build_pref_fixtures(root: Path, seed: int = 0) -> None:
    root.mkdir(parents=True, exist_ok=True)
    gen = MockWriter(root, "gen")
    judge = MockWriter(root, "judge")
    vlm_a = MockWriter(root, "vlm-a")
    vlm_b = MockWriter(root, "vlm-b")

    samples = []
    for sample_id, candidates in PREF_CANDIDATES.items():
        samples.append({
            "sample_id": sample_id,
            "image_ref": None,
            "prompt": PREF_PROMPTS[sample_id],
            "caption": "",
            "system_tag": "gen",
        })
        prompt = resolved_prompt(sample_id)
        base_seed = seed + stable_offset(sample_id)
        for i, (text, units) in enumerate(candidates):
            gen_req = ChatRequest(user=prompt, sampling=SamplingParams(seed=base_seed + i))
            gen.put(gen_req, text, f"candidate {i} for {sample_id}")

            decomp = [{"fact": fact, "identifier": None, "relevance": 1}
                      for fact, _ in units]
            judge.put_json(judge_request(build_decomposition_prompt(text)), decomp,
                           f"decomposition of {sample_id} candidate {i}")

            for fact, verdict in units:
                req = ChatRequest(user=statement_prompt(fact), sampling=JUDGE_SAMPLING)
                vlm_a.put(req, "Yes." if verdict else "No.", f"verdict for {fact!r}")
                vlm_b.put(req, "yes" if verdict else "no", f"verdict for {fact!r}")

    for writer in (gen, judge, vlm_a, vlm_b):
        writer.flush_index()
    _write_jsonl(root / "samples.jsonl", samples)
    (root / "config.yaml").write_text(
        "seed: 0\n"
        "cache_dir: ${CAPSCORE_CACHE}\n"
        "max_workers: 4\n"
        "backends:\n"
        "  - name: gen\n"
        "    kind: mock-fixture\n"
        "    model_id: mock-gen\n"
        "    fixtures_dir: mock/gen\n"
        "  - name: judge\n"
        "    kind: mock-fixture\n"
        "    model_id: mock-judge\n"
        "    fixtures_dir: mock/judge\n"
        "  - name: vlm-a\n"
        "    kind: mock-fixture\n"
        "    model_id: mock-vlm-a\n"
        "    fixtures_dir: mock/vlm-a\n"
        "  - name: vlm-b\n"
        "    kind: mock-fixture\n"
        "    model_id: mock-vlm-b\n"
        "    fixtures_dir: mock/vlm-b\n"
        "roster:\n"
        "  decompose: judge\n"
        "  generate: gen\n"
        "  ensemble: [vlm-a, vlm-b]\n"
        "channels:\n"
        "  n_candidates: 3\n"
        "  min_margin: 0.0\n",
        encoding="utf-8",
    )


def _write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def build_all(base: Path = FIXTURES_ROOT) -> None:
    build_score_fixtures(base / "dcscore")
    build_pref_fixtures(base / "prefgen")


if __name__ == "__main__":
    build_all()
    print(f"fixtures written under {FIXTURES_ROOT}")
