#pragma once

#include "fr/embedder.hpp"
#include "fr/estimator.hpp"
#include "fr/evaluation.hpp"
#include "fr/toygen.hpp"
#include "fr/training.hpp"

#include <string>
#include <vector>

namespace fr {

// A frame of the real-analog corpus. The truth fields are hidden from every
// consumer except tests and evaluation.
struct CorpusFrame {
    std::string id;
    Image image;
    int video = 0;
    std::uint64_t seed = 0;
    LatentCode truth;               // hidden
    Mat bg_grad_shift = Mat::Zero(3, 2);  // hidden
};

struct CorpusConfig {
    int frames_per_video = 4;
    double psi = 1.4;
    double jitter = 0.05;
    double noise = 0.01;
    double bg_grad_std = 0.02;
};

struct RealAnalogCorpus {
    std::vector<CorpusFrame> frames;
    CorpusConfig config;
};

// Frames of one video share identity, nuisance and background slope; pose and
// expression vary per frame.
RealAnalogCorpus build_real_corpus(const ToyGenerator& gen, int n, std::uint64_t seed, const CorpusConfig& cfg = {});
// Clean render of a corpus code with a background-slope shift.
Image render_with_bg_shift(const ToyGenerator& gen, const LatentCode& w, const Mat& bg_grad_shift);

// Directory layout: index.json, frame PNGs, and truth.ckpt (the hidden sidecar).
void save_corpus(const RealAnalogCorpus& c, const std::string& dir);
RealAnalogCorpus load_corpus(const std::string& dir, bool with_truth);

// The last holdout_fraction of videos (at least one when there are two or more) is held out.
struct CorpusSplit {
    std::vector<int> train, held;
};
CorpusSplit split_corpus(const RealAnalogCorpus& corpus, double holdout_fraction = 0.2);

// Maps estimator fit values to W+ through a linear head on [f, f^3, 1].
struct Encoder {
    Vec mu, sd;  // feature normalization, kFitDim
    Mat head;    // 512 x (2 * kFitDim + 1)
    Mat basis;   // 512 x 33, leading left singular vectors of the head; refinement moves w only along these
    int refine_iterations = 3;
};

struct EncoderConfig {
    int synthetic_samples = 3000;
    double ridge = 1e-3;
    int finetune_steps = 0;
    int refine_iterations = 3;
    double learning_rate = 2e-3;
    double holdout_fraction = 0.2;
    double threshold = 0.03;  // held-out reconstruction L1
    double w_pix = 1.0, w_per = 10.0, w_id = 1.0;
    std::uint64_t seed = 1;
};

struct EncoderReport {
    double heldout_l1 = 0;
    int train_frames = 0, heldout_frames = 0;
};

Vec encoder_features(const Encoder& e, const PoseRegressor& reg, const Image& img);
// Throws Error("training_failure") when the held-out L1 misses the threshold.
Encoder train_encoder(const ToyGenerator& gen, const PoseRegressor& reg, const FrozenEmbedder& emb,
                      const RealAnalogCorpus& corpus, const EncoderConfig& cfg, EncoderReport* report = nullptr);
LatentCode invert(const Encoder& e, const ToyGenerator& gen, const PoseRegressor& reg, const Image& img);
// Damped Gauss-Newton on squared pixel error, w = w0 + basis * delta.
LatentCode refine_code(const ToyGenerator& gen, const Mat& basis, const LatentCode& w0, const Image& img, int iterations);

// Inverts the given corpus frames and groups them by video.
TrainingPools build_pools(const Encoder& e, const ToyGenerator& gen, const PoseRegressor& reg,
                          const RealAnalogCorpus& corpus, const std::vector<int>& indices);

Checkpoint save_encoder(const Encoder& e);
Encoder load_encoder(const Checkpoint& ck);

struct TuneConfig {
    int steps = 200;
    double learning_rate = 1e-3;
    double w_pix = 1.0, w_per = 10.0;
};

// Reconstruction objective used by tuning: w_pix * L1 + w_per * perceptual.
double reconstruction_loss(const ToyGenerator& gen, const FrozenEmbedder& emb, const Image& img,
                           const LatentCode& w, const TuneConfig& cfg = {});

// Returns a tuned copy; only Appearance parameters change. Throws Error("non_finite_loss").
ToyGenerator pivotal_tune(const ToyGenerator& gen, const FrozenEmbedder& emb, const Image& img,
                          const LatentCode& w_inv, const TuneConfig& cfg = {});

// Evaluation pairs from held-out videos: self pairs are two frames of one video, cross pairs
// come from two different videos. Sources are inverted with the encoder.
std::vector<EvalPair> corpus_pairs(const Encoder& enc, const ToyGenerator& gen, const PoseRegressor& reg,
                                   const RealAnalogCorpus& c, EvalMode mode, int n, std::uint64_t seed);

}  // namespace fr
