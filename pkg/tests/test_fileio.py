"""
Equation, map and lattice files: diagnostics with positions, and saving.
"""
import dataclasses

import pytest
import sympy as sp

from parafact.core.exceptions import InputError, LoadError
from parafact.equation import equivalent
from parafact.fileio import (
    load_equation_text,
    load_lattice_text,
    load_map_text,
    parse_lattice_line,
    read_document,
    save_equation,
    save_equation_text,
    save_map_text,
)
from parafact.opaque import quadrature_function
from parafact.schemas import ArrowKind, LatticeArrow, LatticeCoincidence, LatticeIntersection, MapShape

SAMPLES = 300

WITH_FUNCTION = """
[meta]
name = law

[vars]
n = 1
u_interval = -1,1

[functions]
H(u) = "3 + cos(u)"

[coeffs]
b.1.1 = "H(u)"
"""


def load_error(text: str) -> LoadError:
    with pytest.raises(LoadError) as info:
        load_equation_text(text)
    return info.value


def test_unknown_identifier_points_at_the_character():
    error = load_error('[vars]\nn = 1\n\n[coeffs]\nb.1.1 = "1 + z"\n')
    assert (error.line, error.column) == (5, 14)
    assert str(error).startswith("<text>:5:14:")


@pytest.mark.parametrize("text, line", [
    ("[stuff]\n", 1),
    ("[vars]\nn = 1\nn = 2\n", 3),
    ("n = 1\n", 1),
    ('[coeffs]\nb.1.1 = "1\n', 2),
    ("[vars\n", 1),
])
def test_document_errors(text, line):
    with pytest.raises(LoadError) as info:
        read_document(text, "bad.eq", ("vars", "coeffs"))
    assert info.value.line == line
    assert str(info.value).startswith(f"bad.eq:{line}")


@pytest.mark.parametrize("text", [
    '[coeffs]\nb.1.1 = "1"\n',
    '[vars]\nn = 1\n[coeffs]\nb.1.1 = "1"\n[geometry]\ng.1.1 = "1"\n',
    '[vars]\nn = 1\n[coeffs]\nb.2.2 = "1"\n',
    '[meta]\nu0 = 5\n[vars]\nn = 1\nu_interval = -1,1\n[coeffs]\nb.1.1 = "1"\n',
    '[vars]\nn = 1\nx_interval = 2,1\n[coeffs]\nb.1.1 = "1"\n',
    '[vars]\nn = 1\nx_interval = 0,1\nx_mod = 1\n[coeffs]\nb.1.1 = "1"\n',
    '[vars]\nn = 0\n[coeffs]\nb.1.1 = "1"\n',
    '[vars]\nn = 1\n[coeffs]\nd.1.1 = "1"\n',
])
def test_invalid_equation_files(text):
    load_error(text)


def test_map_file_errors():
    with pytest.raises(LoadError):
        load_map_text('[map]\ntau = "t"\ny = "x"\n')
    with pytest.raises(LoadError):
        load_map_text('[meta]\nshape = Sideways\n[map]\ntau = "t"\ny = "x"\nv = "u"\n')
    with pytest.raises(LoadError):
        load_map_text('[map]\ntau = "t"\ny = "x"\nv = "u"\n[section]\nt = "tau"\n')


def test_declared_shape_may_be_more_general():
    fmap = load_map_text('[meta]\nshape = QPE-affine\n[map]\ntau = "t"\ny = "x"\nv = "u"\n')
    assert fmap.shape == MapShape.QPE_AFFINE


def test_saved_equations_load_back(equation, tmp_path):
    eq = equation("heat_circle")
    text = save_equation_text(eq)
    assert "x_mod = 1" in text
    path = tmp_path / "copy.eq"
    save_equation(eq, str(path))
    again = load_equation_text(path.read_text(), str(path))
    assert again.name == "heat_circle"
    assert equivalent(eq, again, samples=SAMPLES).passed


def test_defined_functions_are_saved():
    eq = load_equation_text(WITH_FUNCTION)
    text = save_equation_text(eq)
    assert "[functions]" in text
    assert "H(u)" in text
    assert equivalent(eq, load_equation_text(text), samples=SAMPLES).passed


def test_numeric_constructions_cannot_be_saved(fmap):
    F = fmap("identity")
    w = sp.Symbol("w", real=True)
    spec = quadrature_function("Q", w**2 + 1, w, 0.0)
    numeric = dataclasses.replace(F, v=spec(F.source[-1]), section=None, declared_shape=None)
    with pytest.raises(InputError):
        save_map_text(numeric)


def test_saved_maps_keep_sections(fmap):
    text = save_map_text(fmap("sin_shift"))
    assert "[section]" in text
    again = load_map_text(text)
    assert again.section is not None
    assert again.shape == MapShape.AQPE_AFFINE


def test_lattice_records():
    arrow = parse_lattice_line("PE -> PE1 : Closed, Wide : pe.1 : if nonconst")
    assert isinstance(arrow, LatticeArrow)
    assert arrow.kinds == {ArrowKind.CLOSED, ArrowKind.WIDE}
    assert arrow.guard == "nonconst"
    assert isinstance(parse_lattice_line("A == B : x.1"), LatticeCoincidence)
    inter = parse_lattice_line("N = A & B : x.2")
    assert isinstance(inter, LatticeIntersection)
    assert (inter.node, inter.left, inter.right) == ("N", "A", "B")
    assert parse_lattice_line("A -> B : - : x.3").kinds == frozenset()


@pytest.mark.parametrize("line", [
    "A -> B : Sideways : x.1",
    "A -> B : Wide : x.1 : if sometimes",
    "A -> B : Wide : x.1 : nonconst",
    "A -> B : Wide",
    "A B C",
])
def test_bad_lattice_records(line):
    with pytest.raises(LoadError):
        parse_lattice_line(line, "user.facts", 7)


def test_lattice_text_skips_comments():
    lattice = load_lattice_text("# header\n\nA -> B : Wide : x.1  # trailing\n", user=True)
    assert len(lattice.arrows) == 1
    assert lattice.arrows[0].user


def test_default_names_in_two_dimensions():
    eq = load_equation_text('[vars]\nn = 2\nx1_interval = -3,3\nx2_mod = 2\n\n[coeffs]\nb.1.1 = "1"\nb.2.2 = "4"\n')
    assert eq.names == ["t", "x1", "x2", "u"]
    axis = eq.dom.axis("x1")
    assert (axis.lo, axis.hi) == (-3, 3)
    assert eq.dom.axis("x2").modulus == 2


def test_aliases_of_renamed_variables_still_conflict():
    text = '[vars]\nn = 2\nnames = t, p, r, u\np_interval = 0,1\nx1_interval = 0,2\n\n[coeffs]\nb.1.1 = "1"\nb.2.2 = "1"\n'
    error = load_error(text)
    assert "conflicting domain entries for p" in str(error)
