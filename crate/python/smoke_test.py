"""Smoke test for the scrutinize extension module.

Build and install first:  pip install --no-build-isolation crates/py
"""

import tempfile

import scrutinize


def main():
    assert scrutinize.kernels() == ["bt", "sp", "cg", "mg", "lu", "ft", "ep", "is"]

    bt = scrutinize.analyze("bt")
    assert bt.rows() == [("u", 10140, 1500)], bt.rows()
    u = bt.mask("u")
    assert (u.total, u.n_uncritical) == (10140, 1500)
    assert abs(bt.storage()["saved_fraction"] - 1500 / 10140) < 1e-12
    assert bt.to_csv().splitlines()[1] == "BT,u,10140,8640,1500,14.8%"

    cg = scrutinize.analyze("cg")
    (name, strip), = cg.render("x", strip=True)
    assert name == "cg_x_strip.txt"
    assert strip.decode().replace("\n", "").endswith("#..")

    assert scrutinize.analyze("is").by_fiat

    m = scrutinize.Mask([True, False, False, True, True])
    assert m.runs == [(0, 1), (3, 5)]
    assert m.gather([1.0, 2.0, 3.0, 4.0, 5.0]) == [1.0, 4.0, 5.0]
    assert m.scatter([1.0, 4.0, 5.0]) == [1.0, 0.0, 0.0, 4.0, 5.0]
    blob = scrutinize.encode_masks({"a": m, "b": scrutinize.Mask([])})
    assert blob[:4] == b"SCRM"
    assert scrutinize.decode_masks(blob) == {"a": m, "b": scrutinize.Mask([])}
    try:
        scrutinize.decode_masks(blob[:-1])
    except ValueError:
        pass
    else:
        raise AssertionError("truncated mask file accepted")

    grads = scrutinize.gradient("cg")
    assert grads["x"][-1] == 0.0 and grads["x"][0] != 0.0

    assert scrutinize.reconcile(cg, samples=10) == 0

    with tempfile.TemporaryDirectory() as d:
        cg.save(d)
        again = scrutinize.load_report(d, "cg")
        assert again.masks() == cg.masks()
        resumed, equal, verified = scrutinize.crash_and_restart(cg, d + "/ckpt", fill="poison")
        assert equal and verified, (resumed, equal, verified)

    print("smoke test passed")


if __name__ == "__main__":
    main()
