#pragma once

// Seeded random models and data small enough for brute-force checks.

#include <cstdint>

#include "tca/archive.hpp"
#include "tca/encoder.hpp"
#include "tca/pipeline.hpp"

namespace tca {

struct ToyGeometry {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t width = 64;
    std::size_t embed_dim = 32;
    std::size_t image_side = 32;
    std::size_t patch_side = 8;
    std::vector<int> condense_blocks{2, 3};

    EncoderConfig config() const;
};

// Normal weights scaled by 1/sqrt(width), unit layernorm gains.
EncoderWeights make_toy_encoder(const ToyGeometry& g, std::uint64_t seed);
TextEmbeddings make_toy_text(std::size_t classes, std::size_t embed_dim, std::uint64_t seed);
// Standard-normal pixels with labels cycling through the classes.
Dataset make_toy_dataset(std::size_t count, std::size_t image_side, std::size_t classes,
                         std::uint64_t seed);

// One archive holding model, text and data entries.
TensorArchive make_toy_archive(const ToyGeometry& g, std::size_t classes, std::size_t samples,
                               std::uint64_t seed);

}  // namespace tca
