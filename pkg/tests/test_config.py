import pytest

from metaband.config import REFERENCE_TEXT, default_config, parse_config, parse_text
from metaband.errors import ParseError, ValidationError


def test_reference_defaults():
    cfg = parse_text(REFERENCE_TEXT)
    assert cfg["physics.w"] == 40.0
    assert cfg["numerics.h"] == 1 / 64
    assert cfg["numerics.k_electro"] == 12
    assert cfg["numerics.N_dirichlet"] is None
    assert cfg["sweep.kappa"] == ((1.0, 0.0),)
    assert cfg.tau_max == pytest.approx(9.9)
    assert cfg.cell.theta_P == pytest.approx(3.141592653589793 * 0.15**2)


def test_echo_roundtrip():
    cfg = parse_text(REFERENCE_TEXT + "[sweep]\nkappa = 0.6 0.8; 0 2\n")
    again = parse_text(cfg.echo())
    assert again.values == cfg.values
    assert again.digest() == cfg.digest()
    assert cfg["sweep.kappa"] == ((0.6, 0.8), (0.0, 1.0))


def test_digest_ignores_output_directory():
    a = default_config()
    b = a.with_values(outputs__directory="elsewhere")
    assert a.digest() == b.digest()
    assert a.digest() != a.with_values(physics__w="41").digest()


def test_overrides_and_comments():
    cfg = default_config(h=1 / 32, tau_points=5)
    assert cfg["numerics.h"] == 1 / 32 and cfg["sweep.tau_points"] == 5
    txt = REFERENCE_TEXT.replace("w = 40", "w = 20   # plasma")
    assert parse_text(txt)["physics.w"] == 20.0


@pytest.mark.parametrize("key,text", [
    ("numerics.h", "[numerics]\nh = -1\n"),
    ("numerics.h", "[numerics]\nh = abc\n"),
    ("series.etas", "[series]\netas = 0.1\n"),
    ("numerics.k_electro", "[numerics]\nk_electro = 0\n"),
])
def test_validation_errors(key, text):
    with pytest.raises(ValidationError) as exc:
        parse_text(REFERENCE_TEXT + text)
    assert exc.value.key == key


def test_missing_required_key():
    with pytest.raises(ValidationError) as exc:
        parse_text("[physics]\nw = 1\nrho = 0.1\n")
    assert exc.value.key == "geometry.P"


def test_overlapping_rods_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_text(REFERENCE_TEXT.replace("0.7 0.5 0.2", "0.4 0.5 0.2"))
    assert exc.value.key == "geometry"


@pytest.mark.parametrize("text,line", [
    ("[geometry]\nP = disk 0.25 0.5 0.15\nQ = 1\n", 3),
    ("[physics]\nw = 1\nw = 2\n", 3),
    ("[physics]\r\nw = 1\n", 1),
    ("[nope]\n", 1),
    ("w = 1\n", 1),
    ("[physics]\n\nw\n", 3),
    ("[physics\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_text(text)
    assert exc.value.line == line


def test_parse_config_file(tmp_path):
    p = tmp_path / "cell.cfg"
    p.write_text(REFERENCE_TEXT, encoding="utf-8")
    assert parse_config(p).values == parse_text(REFERENCE_TEXT).values
    with pytest.raises(ParseError):
        parse_config(tmp_path / "missing.cfg")
    p.write_bytes(b"\xff\xfe")
    with pytest.raises(ParseError):
        parse_config(p)
