#pragma once

#include "fr/checkpoint.hpp"
#include "fr/image.hpp"

#include <array>
#include <vector>

namespace fr {

// Activations stored as channels x (h * w), spatial index y * w + x.
struct FeatureMap {
    int c = 0, h = 0, w = 0;
    Mat data;
};

struct ConvLayer {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    Mat w;  // cout x (cin * k * k)
    Vec b;  // cout
};

// Seeded random-weight feature nets standing in for face recognition and perceptual
// networks. Weights never change after construction.
struct FrozenEmbedder {
    std::uint64_t seed = 0;
    ConvLayer id1, id2;
    Mat id_fc;  // 32 x 32
    ConvLayer p1, p2, p3;
};

constexpr int kEmbedDim = 32;

FrozenEmbedder build_embedder(std::uint64_t seed);

struct LayerTrace {
    Mat cols;  // im2col of the layer input
    Mat out;   // post-tanh activations
};

struct IdentityTrace {
    LayerTrace l1, l2;
    Vec pooled, raw, unit;
};

struct PerceptualTrace {
    std::array<LayerTrace, 3> layers;
};

using PerceptualFeatures = std::array<FeatureMap, 3>;  // at 64, 32 and 16

Vec identity_embed(const FrozenEmbedder& e, const Image& img, IdentityTrace* trace = nullptr);
Image identity_embed_vjp(const FrozenEmbedder& e, const IdentityTrace& trace, const Vec& dunit);

PerceptualFeatures perceptual_features(const FrozenEmbedder& e, const Image& img, PerceptualTrace* trace = nullptr);
Image perceptual_vjp(const FrozenEmbedder& e, const PerceptualTrace& trace, const std::array<Mat, 3>& dfeat);

// Mean squared feature difference, summed over the three scales.
double perceptual_distance(const PerceptualFeatures& a, const PerceptualFeatures& b);
double cosine_similarity(const Vec& a, const Vec& b);

Checkpoint save_embedder(const FrozenEmbedder& e);
FrozenEmbedder load_embedder(const Checkpoint& ck);
std::string embedder_checksum(const FrozenEmbedder& e);

}  // namespace fr
