"""Object-aware editing for Gaussian splat scenes."""

from .scene import (Camera, Classifier, GaussianScene, SceneError,
                    activate_opacity, activate_scale, deactivate_opacity,
                    deactivate_scale, empty_scene, concat_scenes,
                    look_at_camera)
from .ply import PlyError, load_scene, save_scene
from .files import load_cameras, save_cameras
from .raster import (AppearanceGradients, BlendRecords, MissingRecordsError,
                     ProjectedSplat, RenderError, RenderOutput,
                     backward_appearance, backward_features, project, render)

__all__ = [
    "Camera", "Classifier", "GaussianScene", "SceneError",
    "activate_opacity", "activate_scale", "deactivate_opacity",
    "deactivate_scale", "empty_scene", "concat_scenes", "look_at_camera",
    "PlyError", "load_scene", "save_scene", "load_cameras", "save_cameras",
    "AppearanceGradients", "BlendRecords", "MissingRecordsError",
    "ProjectedSplat", "RenderError", "RenderOutput",
    "backward_appearance", "backward_features", "project", "render",
]

__version__ = "0.1.0"
