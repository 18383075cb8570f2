"""gridlull: renewable-energy analytics on gridded weather data.

The toolkit turns (time, lat, lon) rasters of near-surface weather into
capacity factors for wind and solar power, detects prolonged combined-low
generation events ("dark doldrums"), builds event climatologies, risk maps,
and trend statistics, applies quantile-mapping bias correction, and includes
a desk-scale flow-matching generative downscaler with time conditioning and
observation-guided sampling.
"""

__version__ = "0.1.0"

from .gridstore import (
    CoarsenSpec,
    GridField,
    VariableId,
    coarsen,
    load_gridpack,
    save_gridpack,
    variable,
)
from .powermodel import (
    CfField,
    PvParams,
    Technology,
    TurbineParams,
    cf_from_weather,
    extrapolate_hub,
    solar_cf,
    wind_cf,
    wind_speed,
)
from .aggregate import (
    CapacityLayout,
    CfSeries,
    RegionMask,
    allocate_capacity,
    combined_cf,
    mask_from_polygon,
    technology_shares_2024,
)
from .detect import (
    DetectionConfig,
    Event,
    EventList,
    detect_events,
    duration_histogram,
    events_per_year,
    monthly_climatology,
    rolling_mean,
)
from .biascorrect import (
    QuantileMap,
    apply_quantile_map,
    correct_field,
    fit_quantile_map,
)
from .flowdown import (
    DownscaleConfig,
    FlowConfig,
    FlowModel,
    ObservationModel,
    TimeTags,
    TrainConfig,
    downscale_pipeline,
    fm_loss,
    fm_sample,
    guided_sample,
    init_flow_model,
    load_checkpoint,
    save_checkpoint,
    train_on_fields,
)
from .stats import (
    RiskMap,
    difference_map,
    ensemble_stats,
    pixel_risk_map,
    rolling_decadal,
    trend_test,
)
from .synth import synth_weather
