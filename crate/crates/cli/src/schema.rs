//! Annotated reference config printed by `mvlov schema`.

pub const REFERENCE: &str = r#"# Every table rejects unknown keys. Tables an experiment does not use are
# ignored. Times must be multiples of the relevant step size.

# simulate | fpe | superpose | chaos | truncation_sweep | zvonkin_sweep |
# girsanov_check | bounds_fit | gradient_fit | krylov_check | pair_krylov |
# moments
experiment = "simulate"
seed = 1
# relative to the directory of this file
output_dir = "out"

[kernel]
# zero | constant { value = [..], time_scaling } |
# power_law { kappa, alpha, direction, truncation, time_scaling }
kind = "power_law"
kappa = 0.5
alpha = 1.5
direction = "radial"        # or "rotational" (d = 2 only)
truncation = 10.0           # required for particle runs of singular kernels
# time_scaling = [1.0, 0.5] # coefficients of a polynomial in t

[particles]
n = 1000
d = 2
dt = 0.01
t_end = 1.0
snapshot_times = [0.0, 0.5, 1.0]
# truncation_schedule = [5.0, 10.0, 20.0]   # one level per snapshot interval
solver = { kind = "auto" }  # auto | direct | mesh { spacing }
diffusion = { kind = "constant_sqrt2" }     # or diagonal_state { c0, gamma }
initial = { kind = "gaussian", mean = [0.0, 0.0], var = 0.1 }
# initial = { kind = "point", x0 = [0.0, 0.0] }
# initial = { kind = "uniform_box", lo = [-1.0, -1.0], hi = [1.0, 1.0] }
noise = "gaussian"          # or "zero"

[fpe]
grid = { half_width = 6.0, cells = 128 }    # or lo = [..], hi = [..]
# dt = 1e-4                 # default: the stability limit of the grid
# t_end = 1.0               # default: particles.t_end
boundary = "no_flux"        # or "periodic"
# initial = { .. }          # default: particles.initial
# snapshot_times = [..]     # default: particles.snapshot_times

[superpose]
# bandwidth = 0.05          # default: Silverman's rule
compare_n = [250]
replicas = 4

[chaos]
n_values = [10, 40, 160]
replicas = 100              # at least 100
reference = "fpe"           # or "largest_n" (then set grid)
bootstrap = 200
# grid = { half_width = 6.0, cells = 256 }

[truncation_sweep]
levels = [2.0, 4.0, 8.0]
reference_level = 64.0
beta = 2.0

[zvonkin]
d = 2
cells = 64
half_width = 3.141592653589793
lambdas = [4.0, 16.0, 64.0]
t_end = 1.0
ds_max = 0.01
threshold = 0.5
# feynman_kac = { paths = 2000, dt = 0.001, x0 = [0.3, -0.2] }

[girsanov]
frames = 10                 # reference-flow frames on [0, T)

[fit]
source = "particles"        # or "fpe"
grid = { half_width = 6.0, cells = 64 }
gamma_search = [2.0, 3.0, 4.0, 6.0, 8.0]
c_max = 100.0
# times = [0.5, 1.0]        # default: every positive snapshot time
# bandwidth = 0.1
refine = false

[krylov]
norm = { p = 4.0, q = 4.0, r = 1.0, lattice = "continuum_sup" }
grid = { half_width = 4.0, cells = 64 }
centers = [[0.0, 0.0], [1.0, 0.0]]
widths = [0.1, 0.3]
stride = 1
# refine_dt = 0.001
# khasminskii_lambda = 1.0

[pair_krylov]
grid = { half_width = 4.0, cells = 16 }
p1 = 4.0
p2 = 4.0
q0 = 4.0
alpha = 0.5
cap = 10.0
stride = 1
# refine_dt = 0.001

[moments]
beta = 2.0
increment_beta = 4.0
deltas = [0.05, 0.1, 0.2]
stride = 1
"#;
