"""Physical constants (SI, CODATA 2018) and the species table."""

from typing import Final

C: Final[float] = 299_792_458.0
K_B: Final[float] = 1.380649e-23
ATOMIC_MASS_UNIT: Final[float] = 1.66053906660e-27

# 87Rb D1 line and ground-state hyperfine splitting (Steck, Rb87 D line data)
RB87_D1_WAVELENGTH: Final[float] = 794.978851156e-9
RB87_HYPERFINE_SPLITTING: Final[float] = 6.834682610904e9

SPECIES_MASS: dict[str, float] = {
    "Rb87": 86.909180520 * ATOMIC_MASS_UNIT,
    "Rb85": 84.911789738 * ATOMIC_MASS_UNIT,
    "Cs133": 132.905451961 * ATOMIC_MASS_UNIT,
}


def species_mass(name: str) -> float:
    try:
        return SPECIES_MASS[name]
    except KeyError:
        raise ValueError(f"unknown species {name!r}; known: {sorted(SPECIES_MASS)}") from None
