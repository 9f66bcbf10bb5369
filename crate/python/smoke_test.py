"""Smoke test for the `crtc` Python extension.

Build it first with `cargo build -p crtc-py --release`. If `crtc` is not
importable, the script copies target/release/libcrtc.so to a temporary
directory as crtc.so and imports it from there.
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_crtc():
    try:
        import crtc
        return crtc
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libcrtc.so"
        if lib.exists():
            tmp = tempfile.mkdtemp()
            shutil.copy(lib, pathlib.Path(tmp) / "crtc.so")
            sys.path.insert(0, tmp)
            import crtc
            return crtc
    sys.exit("crtc extension not found; run `cargo build -p crtc-py --release`")


def main():
    crtc = import_crtc()

    files = {
        "file1.toy": "class A { int Foo(int x) { return x; } }",
        "file2.toy": "class B { int UsingFoo() { return Foo(1); } }",
    }
    assert crtc.check(files) == {"file1.toy": [], "file2.toy": []}
    typo = {"file1.toy": "class A { int Foo(int x, in newParam) { return x; } }"}
    [(code, line, col, _)] = crtc.check(typo)["file1.toy"]
    assert (code, line, col) == ("UnknownType", 1, 26), (code, line, col)

    assert crtc.deps(files) == {"A/Foo": ["B/UsingFoo"], "B/UsingFoo": []}

    golden = (ROOT / "scenarios" / "usecase_bob_john.crtcs").read_text()
    result = crtc.run_scenario(golden)
    assert result.passed and not result.violations, result.failures
    assert result.commits == 1 and result.denials == 1, result

    fuzz = crtc.run_scenario(crtc.random_scenario(3, clients=2, steps=30), 3)
    assert fuzz.passed and not fuzz.violations, fuzz.violations

    line = next(l.split(" ", 3)[3] for l in result.trace.splitlines() if " wire " in l)
    assert crtc.canonicalize(line) == line + "\n"
    try:
        crtc.canonicalize('{"v":1,')
    except ValueError:
        pass
    else:
        raise AssertionError("malformed frame accepted")

    print("crtc smoke test ok:", result)


if __name__ == "__main__":
    main()
