#pragma once

#include <functional>
#include <memory>

#include "pipetteloc/nn/layers.hpp"
#include "pipetteloc/nn/optim.hpp"
#include "pipetteloc/types.hpp"

namespace pipetteloc {

// Fixed crop size around each labelled tip.
inline constexpr int kGanPatchSize = 80;

struct CropRecord {
    ImageGrid patch;                  // exactly 80x80, zero-padded at borders
    int origin_x = 0, origin_y = 0;   // top-left of the virtual window in scene px
    int pad_left = 0, pad_top = 0, pad_right = 0, pad_bottom = 0;
};

// One 80x80 patch per tip, centered on the nearest-integer tip position.
std::vector<CropRecord> crop_tips(const LabeledScene& scene);

struct GanConfig {
    int base_channels = 64;
    int res_blocks = 6;
    double cycle_weight = 10.0;
    double lr = 2e-4;
    int epochs = 200;
    int decay_start = 100;    // lr constant through this epoch, then linear decay to 0
    int batch_size = 1;
    int checkpoint_every = 0;  // epochs between checkpoint files; 0 = none
    std::string checkpoint_path;
    uint64_t seed = 0;

    void validate() const;
    double lr_at_epoch(int epoch) const;  // 1-based epoch
};

// Residual encoder-decoder generator and 70x70-receptive-field patch
// discriminator pair per direction, least-squares adversarial loss,
// L1 cycle loss. All nets work on 80x80 single-channel patches in [-1,1].
class CycleGanBundle {
public:
    static CycleGanBundle create(const GanConfig& config);

    GanConfig config;
    std::unique_ptr<nn::Sequential> gen_noisy_to_clean;  // G
    std::unique_ptr<nn::Sequential> gen_clean_to_noisy;  // G'
    std::unique_ptr<nn::Sequential> disc_clean;          // D_E
    std::unique_ptr<nn::Sequential> disc_noisy;          // D_I

    int epoch = 0;
    std::vector<double> cycle_loss_history;  // per-epoch mean cycle loss

    std::unique_ptr<nn::Adam> gen_opt, disc_clean_opt, disc_noisy_opt;

    // Applies G to a [0,1] patch (internally mapped through [-1,1]).
    ImageGrid translate_to_clean(const ImageGrid& patch) const;

    void save(const std::string& path) const;
    static CycleGanBundle load(const std::string& path);
};

// Alternating generator/discriminator updates over unpaired 80x80 patch sets.
// Runs from bundle-creation through config.epochs; deterministic for a fixed
// (config, data) pair.
CycleGanBundle train_cyclegan(const std::vector<ImageGrid>& noisy_patches,
                              const std::vector<ImageGrid>& clean_patches,
                              const GanConfig& config);

// Continues training an existing bundle up to bundle.config.epochs.
void train_cyclegan_epochs(CycleGanBundle& bundle, const std::vector<ImageGrid>& noisy_patches,
                           const std::vector<ImageGrid>& clean_patches);

using PatchTranslator = std::function<ImageGrid(const ImageGrid&)>;

// Translates every tip crop and writes it back at its origin; padding regions
// are discarded, overlaps are averaged, pixels outside all crop windows are
// untouched. Tips are copied unchanged and the domain tag becomes exvivo_like.
LabeledScene enhance_scene(const LabeledScene& scene, const CycleGanBundle& bundle);
LabeledScene enhance_scene_with(const LabeledScene& scene, const PatchTranslator& translate);

}  // namespace pipetteloc
