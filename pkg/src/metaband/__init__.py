"""Sub-wavelength band structure of a periodic two-rod metamaterial crystal.

Modules:
    geometry: unit cell and rod shapes.
    mesh, fem: periodic triangulation and P1 finite element forms.
    dirichlet, electrostatic, greens: the two governing spectra.
    effective: effective permeability, inverse permittivity and their
        poles and zeros.
    bands: interval decomposition and dispersion branches.
    series: higher-order power series in the cell size to wavelength ratio.
    bloch: direct Bloch eigensolver used as an oracle for the series.
    config, pipeline, cli: configuration and orchestration.
    validation: acceptance suite on the reference cell.
"""

__version__ = "0.1.0"
