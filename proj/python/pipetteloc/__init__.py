"""Multi-pipette tip localization: synthetic scenes, Gaussian heatmaps,
Hungarian-matched losses, and the coarse-to-fine localizer."""

from pipetteloc._core import (  # noqa: F401
    GAN_PATCH_SIZE,
    LabeledScene,
    LocalizerModel,
    SceneConfig,
    __version__,
    benchmark_inference,
    brute_force_assignment,
    cost_matrix,
    crop_tips,
    dice_loss,
    evaluate_model,
    gaussian_heatmap,
    heatmap_iou,
    hungarian,
    hungarian_loss,
    read_dataset,
    render_scene,
    total_loss,
    train_localizer,
    write_dataset,
)
