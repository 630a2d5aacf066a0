import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import E2E, FIXTURES, api, dataset, query
from seal.ingest import SourceAdapterConfig, parse_benchmark
from seal.schema import (
    AmbiguousApiName,
    ApiCall,
    ApiNotFound,
    Dataset,
    IdAllocator,
    ParamSpec,
    Query,
    canonical_json,
    content_hash,
    dataset_hash,
    dump_dataset,
    load_dataset,
    lookup_api,
    parse_json,
    validate_dataset,
)

# -- canonical JSON ---------------------------------------------------------

json_scalars = (
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**60), max_value=2**60)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=8)
)
json_values = st.recursive(
    json_scalars,
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


def oracle(value) -> bytes:
    """Independent reference: normalize numbers, then sort keys with the stdlib encoder."""

    def norm(v):
        if isinstance(v, bool) or v is None or isinstance(v, str):
            return v
        if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
            return int(v)
        if isinstance(v, dict):
            return {k: norm(x) for k, x in v.items()}
        if isinstance(v, list):
            return [norm(x) for x in v]
        return v

    return json.dumps(norm(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def test_key_order_does_not_matter():
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1}) == b'{"a":2,"b":1}'


def test_integral_float_equals_int():
    assert canonical_json(1.0) == canonical_json(1) == b"1"
    assert canonical_json({"amount": 100.0}) == canonical_json({"amount": 100})


def test_nested_keys_sorted():
    assert canonical_json({"x": [{"b": 0, "a": 0}]}) == b'{"x":[{"a":0,"b":0}]}'


def test_non_ascii_kept_and_minimal_escapes():
    assert canonical_json({"é": "ü\n\""}) == '{"é":"ü\\n\\""}'.encode("utf-8")


def test_code_point_order_not_locale():
    assert canonical_json({"a": 1, "B": 2, "é": 3, "z": 4}) == '{"B":2,"a":1,"z":4,"é":3}'.encode()


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf, {"x": [math.nan]}])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        canonical_json(bad)


def test_non_json_rejected():
    with pytest.raises(TypeError):
        canonical_json({1: "x"})
    with pytest.raises(TypeError):
        canonical_json({"x": object()})


def test_parse_json_rejects_nan_literal():
    with pytest.raises(ValueError):
        parse_json('{"x": NaN}')


def test_large_integral_float_keeps_float_form():
    assert canonical_json(2.0**60) == repr(2.0**60).encode()


@settings(max_examples=300)
@given(json_values)
def test_matches_sort_then_serialize_oracle(value):
    assert canonical_json(value) == oracle(value)


@settings(max_examples=300)
@given(json_values)
def test_idempotent(value):
    once = canonical_json(value)
    assert canonical_json(parse_json(once)) == once


@settings(max_examples=200)
@given(st.dictionaries(st.text(max_size=6), json_scalars, max_size=8), st.randoms())
def test_insertion_order_invariant(d, rnd):
    items = list(d.items())
    rnd.shuffle(items)
    assert canonical_json(dict(items)) == canonical_json(d)


def test_content_hash_is_sha256_hex():
    h = content_hash({"a": 1})
    assert len(h) == 64 and int(h, 16) >= 0
    assert h == content_hash({"a": 1.0})


# -- data model -------------------------------------------------------------


def test_gt_calls_absent_and_empty_are_distinct():
    absent = Query(id="q", text="t", source="metatool", gt_api_ids=("a",))
    empty = Query(id="q", text="t", source="apigen", gt_api_ids=("a",), gt_calls=())
    assert "gt_calls" not in absent.to_json()
    assert empty.to_json()["gt_calls"] == []
    assert Query.from_json(absent.to_json()).gt_calls is None
    assert Query.from_json(empty.to_json()).gt_calls == ()


def test_dataset_round_trip(tmp_path):
    f = api("f", "x")
    d = dataset([f], [query("q1", ApiCall("f", {"x": 1}, f.id))])
    path = tmp_path / "d.json"
    dump_dataset(d, path)
    assert load_dataset(path) == d
    assert path.read_bytes() == canonical_json(d.to_json()) + b"\n"
    assert dataset_hash(load_dataset(path)) == dataset_hash(d)


def test_param_spec_round_trip():
    p = ParamSpec(name="days", type_label="integer, optional", required=False, description="n", default=3,
                  type="integer")
    assert ParamSpec.from_json(p.to_json()) == p


def test_load_rejects_non_dataset(tmp_path):
    from seal.schema import SchemaError

    path = tmp_path / "bad.json"
    path.write_text('{"apis": 3}')
    with pytest.raises(SchemaError):
        load_dataset(path)


# -- validation -------------------------------------------------------------


def test_well_formed_fixture_has_empty_report():
    f, g = api("f", "x"), api("g")
    d = dataset([f, g], [query("q1", ApiCall("f", {"x": "1"}, f.id), ApiCall("g", {}, g.id))])
    assert not validate_dataset(d)


def test_missing_reference_reported_once():
    f = api("f")
    d = dataset([f], [query("q1", gt_api_ids=("missing",))])
    report = validate_dataset(d)
    assert report.rules() == ["referential_integrity"]
    assert report.violations[0].subject == "q1"


def test_duplicate_query_id_reported_once():
    f = api("f")
    q = query("q1", gt_api_ids=(f.id,))
    report = validate_dataset(dataset([f], [q, q]))
    assert report.rules() == ["duplicate_query_id"]


def test_every_violation_listed():
    from seal.schema import ApiDoc

    bad = ApiDoc(
        id="x/y/z", source="nowhere", tool_name="y", api_name="",
        parameters=(ParamSpec("p"), ParamSpec("p"), ParamSpec("o", type_label="string, optional", required=True)),
    )
    d = dataset([bad, bad], [query("q", ApiCall("z", {}, "gone"), gt_api_ids=("x/y/z",))])
    rules = set(validate_dataset(d).rules())
    assert rules == {"duplicate_api_id", "empty_api_name", "unknown_source", "duplicate_parameter",
                     "optional_marked_required", "referential_integrity"}


@settings(max_examples=100)
@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6, unique=True),
       st.lists(st.lists(st.sampled_from("abcdefgh"), max_size=3), max_size=5))
def test_clean_report_implies_lookup_resolves(names, refs):
    apis = [api(n) for n in names]
    queries = [query(f"q{i}", gt_api_ids=tuple(f"apigen/tool/{r}" for r in ref)) for i, ref in enumerate(refs)]
    d = dataset(apis, queries)
    if not validate_dataset(d):
        for q in d.queries:
            for api_id in q.gt_api_ids:
                assert lookup_api(d, api_id).id == api_id


# -- lookup and ids ---------------------------------------------------------


def test_lookup_by_id_and_name():
    f, g = api("f"), api("g", tool="other")
    d = dataset([f, g])
    assert lookup_api(d, f.id) is f
    assert lookup_api(d, "g") is g


def test_lookup_ambiguous_and_missing():
    d = dataset([api("f", tool="a"), api("f", tool="b")])
    with pytest.raises(AmbiguousApiName) as exc:
        lookup_api(d, "f")
    assert exc.value.candidates == ["apigen/a/f", "apigen/b/f"]
    with pytest.raises(ApiNotFound):
        lookup_api(d, "nope")


def test_id_allocator_suffixes_and_is_stable():
    def run():
        alloc = IdAllocator()
        return [alloc.allocate("toolbench", "My Tool", "Get Data"),
                alloc.allocate("toolbench", "my tool", "get data"),
                alloc.allocate("toolbench", "My Tool", "Get Data-2"),
                alloc.allocate("toolbench", "My Tool", "Get Data")]

    ids = run()
    assert ids[:2] == ["toolbench/my_tool/get_data", "toolbench/my_tool/get_data-2"]
    assert len(set(ids)) == 4
    assert run() == ids


def test_dataset_is_immutable():
    d = dataset([api("f")])
    with pytest.raises(AttributeError):
        d.apis = ()  # type: ignore[misc]
    assert isinstance(d, Dataset)


# -- published JSON Schema --------------------------------------------------


def test_json_schema_accepts_fixture_and_ingested_datasets():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((Path(__file__).parent.parent / "docs" / "dataset.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    docs = [json.loads((E2E / "dataset.json").read_text())]
    ingest = FIXTURES / "ingest"
    for source, files in [("toolbench", ["toolbench_sanitize.json"]), ("anytool", ["anytool.json"]),
                          ("apigen", ["apigen.jsonl"]), ("apibench", ["apibench.jsonl"]),
                          ("metatool", ["metatool_descriptions.json", "metatool_queries.json"])]:
        d = parse_benchmark(SourceAdapterConfig(source=source, paths=tuple(str(ingest / f) for f in files)))
        docs.append(json.loads(canonical_json(d.to_json())))
    for doc in docs:
        assert not list(validator.iter_errors(doc))
    bad = json.loads(json.dumps(docs[0]))
    bad["apis"][0]["parameters"][0]["type"] = "str"
    assert list(validator.iter_errors(bad))
