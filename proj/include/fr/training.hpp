#pragma once

#include "fr/directions.hpp"
#include "fr/embedder.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fr {

struct LossWeights {
    double r = 1.0;
    double id = 10.0;
    double per = 10.0;
    double pix = 10.0;  // paired fine-tuning only
};

enum class Scheme { SYNTHETIC, MIXED, PAIRED };
Scheme parse_scheme(const std::string& s);
std::string scheme_name(Scheme s);

struct TrainConfig {
    Scheme scheme = Scheme::SYNTHETIC;
    int iterations = 2000;
    int batch_size = 8;
    double learning_rate = 1e-4;
    double single_attribute_fraction = 0.5;
    double mixed_real_fraction = 0.5;
    std::uint64_t seed = 1;
    LossWeights weights;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

void validate(const TrainConfig& c);

struct LossBreakdown {
    ReenactmentLoss r;
    double id = 0, per = 0, pix = 0;
    double total = 0;
};

double identity_loss(const FrozenEmbedder& emb, const Image& a, const Image& b);
double perceptual_loss(const FrozenEmbedder& emb, const Image& a, const Image& b);
double pixel_loss(const Image& a, const Image& b);

// Eq. 3 style objective between source and reenacted images plus the shape term.
LossBreakdown total_loss_unpaired(const LossWeights& w, const FrozenEmbedder& emb, const Image& source,
                                  const Image& reenacted, const Shape& s_r, const Shape& s_gt);
// Paired variant: image terms against the real target frame, plus L1 pixels.
LossBreakdown total_loss_paired(const LossWeights& w, const FrozenEmbedder& emb, const Image& reenacted,
                                const Image& target, const Shape& s_r, const Shape& s_gt);

// Inverted corpus frames. Videos group frames of one identity.
struct InvertedFrame {
    LatentCode w_inv;
    Image image;
    int video = 0;
};

struct TrainingPools {
    std::vector<InvertedFrame> frames;
    std::vector<std::vector<int>> videos;  // frame indices per video
};

struct TrainingPair {
    LatentCode source;
    bool real_source = false;
    bool single = false;
    int attribute = -1;
    double eps = 0;
    LatentCode target;        // used when !single
    bool real_target = false;  // PAIRED: target image is a real frame
    Image target_image;
};

TrainingPair sample_training_pair(const TrainConfig& cfg, const ToyGenerator& gen, const TrainingPools& pools,
                                  Rng& rng, double a = 1.0);

struct SampleOutcome {
    LossBreakdown loss;
    Vec delta;   // rescaled pose change applied, 15
    Vec grad_w;  // dL / d vec(w_r), 512
};

struct TrainContext {
    const ToyGenerator& gen;
    const PoseRegressor& reg;
    const FrozenEmbedder& emb;
};

// Full forward pass for one pair and, when grad is set, the gradient with respect to w_r.
SampleOutcome sample_loss(const TrainContext& ctx, const DirectionMatrix& d, const LossWeights& w,
                          const TrainingPair& pair, bool paired, bool grad);

// Mean loss over a batch and its gradient with respect to A.
struct BatchOutcome {
    LossBreakdown loss;
    Mat grad_a;
};
BatchOutcome batch_loss(const TrainContext& ctx, const DirectionMatrix& d, const LossWeights& w,
                        const std::vector<TrainingPair>& batch, bool paired, bool grad);

struct LogRecord {
    int iteration = 0;
    LossBreakdown loss;
    double wall_ms = 0;
};
std::string log_line(const LogRecord& r);

struct TrainResult {
    DirectionMatrix directions;
    std::vector<LogRecord> log;
};

using LogSink = std::function<void(const LogRecord&)>;

// Adam at constant learning rate with the second moment shared per column of A.
// Throws Error("non_finite_loss") naming the iteration.
TrainResult train_directions(const TrainContext& ctx, const DirectionMatrix& init, const TrainConfig& cfg,
                             const TrainingPools& pools = {}, const LogSink& sink = nullptr);
TrainResult finetune_paired(const TrainContext& ctx, const DirectionMatrix& init, const TrainingPools& pools,
                            TrainConfig cfg, const LogSink& sink = nullptr);

}  // namespace fr
