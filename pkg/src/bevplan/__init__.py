"""bevplan: camera-to-BEV occupancy grids and an LSTM trajectory planner.

Modules:
    geometry  -- homographies (DLT estimation, rescaling), camera projection,
                 grid warping
    ogm       -- occupancy grids: rasterization, regional IoU, components
    scene     -- synthetic driving scenes, camera-view masks, corruption
    dataset   -- packaged samples and the on-disk dataset layout
    planner   -- encoder-decoder LSTM with a bivariate-Gaussian head (manual
                 exact BPTT)
    presets   -- experiment input pipelines (holistic, mid-to-end, ...)
    metrics   -- ADE and L1 lateral/longitudinal trajectory errors
    gridio    -- PGM / JSON / CSV file formats
    cli       -- command-line front end (``bevplan`` entry point)
"""

from .geometry import (
    CameraModel,
    Correspondence,
    GeometryError,
    Homography,
    estimate_homography_dlt,
    ground_plane_homography,
    project_point,
    rescale_homography,
    warp_grid,
)
from .metrics import TrajectoryError, ade, evaluate_trajectories, l1_lat_long
from .ogm import (
    Box3D,
    GridSpec,
    OccupancyGrid,
    connected_components,
    footprint_polygon_camera,
    iou,
    rasterize_drivable,
    rasterize_footprints,
    region_mask,
    threshold,
)
from .planner import (
    GaussianParams,
    PlannerConfig,
    PlannerDataset,
    TrainConfig,
    backward,
    decode,
    encode,
    featurize,
    init_params,
    nll_loss,
    sample_position,
    train,
)
from .scene import (
    NoiseParams,
    Scene,
    SceneConfig,
    corrupt_masks,
    generate_scene,
    mounted_camera,
    render_masks,
)

__version__ = "0.1.0"
