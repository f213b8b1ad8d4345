"""Variational deformation kernel for rotating, prestressed fluid-solid bodies.

Constitutive tensor algebra under prestress, gravitational potential
solvers, surface calculus on analytic interface patches, discretized
second-order action assembly with fluid-solid slip, and rate-and-state
rupture dynamics, behind a config-driven command line front end.
"""

from .kinematics import (
    StrainState,
    deformation_state,
    piola_transform,
    inverse_piola_transform,
    material_density,
    surface_element_transform,
    linearization_check,
)
from .elastica import (
    Tensor4,
    Prestress,
    FluidModuli,
    PrestressParams,
    isotropic_gamma,
    classical_tensor,
    build_prestressed,
    stress_perturbations,
    t1_strain_form,
    deviatoric_split,
    fluid_lambda,
    fluid_xi,
    fluid_tpk1,
    fluid_t1,
)
from .gravity import (
    GRAVITATIONAL_CONSTANT_SI,
    RadialDensityModel,
    SampledDensity,
    PotentialSamples,
    newtonian_potential,
    poisson_residual,
    monopole_decomposition,
    solve_phi1,
    centrifugal,
    static_equilibrium_residual,
    HydrostaticProfile,
    hydrostatic_solve,
)
from .surface import (
    SurfacePatch,
    TwoSidedField,
    plane_patch,
    sphere_patch,
    cylinder_patch,
    project_tangential,
    surface_gradient,
    surface_divergence,
    jump_algebra,
    wswap_check,
    surface_divergence_theorem_check,
    normality_check,
    modified_traction,
)
from .mesh import (
    CompositeMesh,
    DofMap,
    box_mesh,
    layered_ball_mesh,
    read_mesh,
    write_mesh,
)
from .model import Material, EarthModel
from .assembly import (
    SystemMatrices,
    field_tables,
    assemble,
    action_value,
    frechet_fd_check,
    expansion_check,
    eigenmodes,
    evolve,
    hydrostatic_assemble,
    interface_residuals,
    static_phi1,
)
from .rupture import (
    FrictionLaw,
    FaultPointState,
    SpringSlider,
    friction_coefficient,
    friction_regularized,
    steady_state,
    state_rate,
    solve_slip_rate,
    spring_slider_run,
    FaultDiscretization,
    fault_discretization,
    initial_fault_states,
    fault_coupled_step,
    fault_evolve,
    dissipation_rate,
)
from .shell import ModelConfig, RunReport, load_model, generate_mesh, run

__version__ = "0.1.0"
