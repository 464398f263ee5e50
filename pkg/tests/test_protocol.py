from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsroute.dispatch import AccessFrequencyTable, dispatch
from nsroute.errors import (
    ExecutorFailure,
    FrameError,
    LengthMismatch,
    NotBusy,
    ProtocolError,
    TruncatedFrame,
)
from nsroute.protocol import (
    FileTransfer,
    JobEnvelope,
    StatusLine,
    decode_job,
    decode_results,
    encode_job,
    encode_results,
    op_send,
    release_server,
    run_job,
    store_outputs,
    stub_execute,
)

from conftest import make_request
from oracles import fnv_oracle

GOLDEN = Path(__file__).parent / "golden"
FIG7_PAYLOAD = b"print(gcf,'-djpeg','normfar dB.jpg');\n"
FIG7 = JobEnvelope("j1", "10.20.30.40", "app1", "n3", "s3", 4, FIG7_PAYLOAD)
FIG10_FILES = [
    FileTransfer("nearfieldEz.jpg", b"\xff\xd8\xff\xe0"),
    FileTransfer("normfardB.jpg", b"\xff\xd8\x00\n"),
    FileTransfer("n_rfwe.jpg", b""),
    FileTransfer("output.mat", b"MATLAB\n"),
]
FIG10_STATUS = StatusLine("app1", "n2", "s2")

tokens = st.from_regex(r"[A-Za-z0-9_]{1,12}", fullmatch=True)
ips = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: ".".join(map(str, t)))
envelopes = st.builds(JobEnvelope, tokens, ips, tokens, tokens, tokens,
                      st.integers(1, 50), st.binary(max_size=200))
names = st.from_regex(r"[A-Za-z0-9_][A-Za-z0-9_.\-]{0,15}", fullmatch=True).filter(lambda n: n not in (".", ".."))
files = st.lists(st.builds(FileTransfer, names, st.binary(max_size=64)), max_size=6)
statuses = st.builds(StatusLine, tokens, tokens, tokens)


class TestJobFrame:
    def test_golden(self):
        assert encode_job(FIG7) == (GOLDEN / "fig7_job.bin").read_bytes()
        assert decode_job((GOLDEN / "fig7_job.bin").read_bytes()) == FIG7

    def test_header_fields(self):
        header = encode_job(FIG7).split(b"\n", 1)[0]
        assert header.split(b" ")[-4:] == [b"n3", b"s3", b"4", b"38"]

    def test_empty_payload(self):
        e = JobEnvelope("j", "10.0.0.1", "a", "n", "s", 1)
        assert encode_job(e).endswith(b" 1 0\n")
        assert decode_job(encode_job(e)) == e

    def test_bad_magic(self):
        with pytest.raises(FrameError):
            decode_job(b"JOBX j1 10.20.30.40 app1 n3 s3 4 0\n")

    @pytest.mark.parametrize("frame, err", [
        (b"JOB j1 10.20.30.40 app1 n3 s3 4\n", FrameError),
        (b"JOB j1 10.20.30.40 app1 n3 s3 four 0\n", FrameError),
        (b"JOB j1 10.20.30.40 app1 n3 s3 4 -1\n", FrameError),
        (b"JOB j1 10.20.30.40 app1 n3 s3 0 0\n", FrameError),
        (b"JOB j1 10.20.30.40 app1 n3 s3 4 5\nabc", TruncatedFrame),
        (b"JOB j1 10.20.30.40 app1 n3 s3 4 2\nabc", FrameError),
        (b"JOB j1 10.20.30.40 app1 n3 s3 4 0", TruncatedFrame),
        (b"", TruncatedFrame),
    ])
    def test_errors(self, frame, err):
        with pytest.raises(err):
            decode_job(frame)

    @settings(max_examples=300)
    @given(envelopes)
    def test_round_trip(self, e):
        assert decode_job(encode_job(e)) == e

    @given(st.binary(max_size=80))
    def test_framing_safety(self, data):
        try:
            e = decode_job(data)
        except ProtocolError:
            return
        assert encode_job(e) == data


class TestExecutor:
    def test_stub_outputs(self):
        out = stub_execute("j1", "app1", b"", 2)
        assert [f.name for f in out] == ["app1_out1.dat", "app1_out2.dat"]
        assert out[0].content == b"ed882bb4beb29b45"
        assert out[1].content == format(fnv_oracle(b"j1:app1:2"), "016x").encode()
        assert all(f.length == 16 for f in out)

    def test_deterministic_and_job_sensitive(self):
        assert stub_execute("j1", "a", b"x", 3) == stub_execute("j1", "a", b"x", 3)
        assert stub_execute("j1", "a", b"", 1)[0].content != stub_execute("j2", "a", b"", 1)[0].content

    def test_run_job_counts_and_scratch(self):
        scratch = {}
        out = run_job(FIG7, scratch=scratch)
        assert len(out) == 4 and scratch["j1"] == out
        single = JobEnvelope("j2", "10.20.30.40", "app1", "n3", "s3", 1)
        assert len(run_job(single)) == 1
        frame = op_send(scratch, "j1", StatusLine("app1", "n3", "s3"))
        assert "j1" not in scratch
        assert decode_results(frame)[0] == out

    def test_executor_crash(self):
        def crashing(*_):
            raise ExecutorFailure("boom")
        scratch = {"j1": ["stale"]}
        with pytest.raises(ExecutorFailure):
            run_job(FIG7, crashing, scratch)
        assert scratch == {}


class TestResultFrames:
    def test_golden(self):
        golden = (GOLDEN / "fig10_results.bin").read_bytes()
        assert encode_results(FIG10_FILES, FIG10_STATUS) == golden
        assert golden.endswith(b"EXIT\nSTATUS app1 n2 s2\n")
        assert decode_results(golden) == (FIG10_FILES, FIG10_STATUS)

    def test_zero_files(self):
        data = encode_results([], FIG10_STATUS)
        assert data == b"EXIT\nSTATUS app1 n2 s2\n"
        assert decode_results(data) == ([], FIG10_STATUS)

    @pytest.mark.parametrize("data", [
        b"FILE a 5\nabcEXIT\nSTATUS app1 n2 s2\n",
        b"FILE a 2\nabcEXIT\nSTATUS app1 n2 s2\n",
    ])
    def test_length_mismatch(self, data):
        with pytest.raises(LengthMismatch):
            decode_results(data)

    @pytest.mark.parametrize("data, err", [
        (b"FILE a 50\nabc", TruncatedFrame),
        (b"FILE a 3\nabcEXIT\n", TruncatedFrame),
        (b"NOPE\n", FrameError),
        (b"EXIT\nSTATUS app1 n2\n", FrameError),
        (b"FILE ../evil 0\nEXIT\nSTATUS a n s\n", FrameError),
        (b"EXIT\nSTATUS a n s\nextra", FrameError),
    ])
    def test_errors(self, data, err):
        with pytest.raises(err):
            decode_results(data)

    @settings(max_examples=300)
    @given(files, statuses)
    def test_round_trip(self, fs, status):
        assert decode_results(encode_results(fs, status)) == (fs, status)

    @given(files, statuses)
    def test_transcript_counts_files(self, fs, status):
        data = encode_results(fs, status)
        got, _ = decode_results(data)
        assert len(got) == len(fs)

    @given(st.binary(max_size=80))
    def test_framing_safety(self, data):
        try:
            fs, status = decode_results(data)
        except ProtocolError:
            return
        assert encode_results(fs, status) == data


class TestStorage:
    def test_store_under_external_ip(self, tmp_path):
        paths = store_outputs(tmp_path, "10.20.30.40", [FileTransfer("nearfieldEz.jpg", b"img")])
        assert paths == [tmp_path / "10.20.30.40" / "nearfieldEz.jpg"]
        assert paths[0].read_bytes() == b"img"

    def test_overwrite(self, tmp_path):
        store_outputs(tmp_path, "10.20.30.40", [FileTransfer("x.dat", b"old")])
        store_outputs(tmp_path, "10.20.30.40", [FileTransfer("x.dat", b"new")])
        assert (tmp_path / "10.20.30.40" / "x.dat").read_bytes() == b"new"
        assert sorted(p.name for p in (tmp_path / "10.20.30.40").iterdir()) == ["x.dat"]

    def test_empty(self, tmp_path):
        assert store_outputs(tmp_path, "10.20.30.40", []) == []

    def test_rejects_traversal_before_writing(self, tmp_path):
        with pytest.raises(ValueError):
            store_outputs(tmp_path, "10.20.30.40", [FileTransfer("ok.dat", b"1"), FileTransfer("../evil", b"2")])
        assert not (tmp_path / "10.20.30.40").exists()


class TestRelease:
    def test_release_after_dispatch(self, table1):
        table1.server("n2", "s2").apps = frozenset({"app1"})
        table1.server("n2", "s1").active = False
        table1.server("n2", "s3").active = False
        for n in ("n1", "n3", "n4"):
            table1.network(n).current_load = table1.network(n).threshold_load
        d, _ = dispatch(table1, make_request("app1"), AccessFrequencyTable())
        assert (d.network, d.server) == ("n2", "s2")
        release_server(table1, StatusLine("app1", "n2", "s2"))
        srv = table1.server("n2", "s2")
        assert not srv.busy and srv.current_load == 0 and table1.network("n2").current_load == 0

    def test_double_release(self, table1):
        d, _ = dispatch(table1, make_request("App4"), AccessFrequencyTable())
        status = StatusLine("App4", d.network, d.server)
        release_server(table1, status)
        with pytest.raises(NotBusy):
            release_server(table1, status)

    def test_never_dispatched(self, table1):
        with pytest.raises(NotBusy):
            release_server(table1, StatusLine("app1", "n2", "s2"))

    def test_load_accounting_restored(self, table1):
        before = [(s.current_load, s.busy) for _, s in table1.iter_servers()]
        decisions = [dispatch(table1, make_request(a, job_id=f"j{i}"), AccessFrequencyTable())[0]
                     for i, a in enumerate(["App1", "App2", "App3", "App4"])]
        for d in decisions:
            release_server(table1, StatusLine("x", d.network, d.server))
        assert [(s.current_load, s.busy) for _, s in table1.iter_servers()] == before
        assert all(n.current_load == 0 for n in table1.networks)
