from .sweep import KernelSweepSpec, SweepSpec, build_family, run_kernel_sweep, run_sweep
from .figures import FigureExport, MissingResults, export_figure
