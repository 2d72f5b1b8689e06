"""trapscope: simulation and design library for trap-integrated fluorescence collection.

Submodules
----------
trap        surface-electrode rf pseudopotential (analytic gapless-plane model)
collection  solid-angle collection efficiency through stacked rectangular openings
lens        collimation phase profiles, even-power fits, nanopillar feature maps
waveoptics  angular-spectrum propagation, PSF metrics, transmittance budget
raytrace    Monte Carlo sequential ray tracing of the two detection setups
config      run configuration schema, defaults, and (de)serialization
pipelines   figure-reproduction pipelines, sweeps, manifests
cli         command-line entry point
"""

__version__ = "0.1.0"
