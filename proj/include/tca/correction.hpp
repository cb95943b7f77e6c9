#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "tca/tensor.hpp"

namespace tca {

class Reservoir;

enum class LayerEmphasis { shallow, deep };

std::string to_string(LayerEmphasis e);
LayerEmphasis parse_emphasis(const std::string& s);

struct CorrectionConfig {
    double lambda = 2.0;
    double beta = 0.05;
    LayerEmphasis direction = LayerEmphasis::shallow;

    void validate() const;
};

// Normalized exp(+-l / beta) over layers 1..L. Deep emphasis grows with l,
// shallow emphasis is its mirror image.
Vector layer_weights(double beta, std::size_t layers, LayerEmphasis direction);

// Per class: mean over stored records of sum_l w_l * cos(stack_l, record_l).
// Classes with an empty buffer score 0.
Vector token_level_probs(const Matrix& anchor_stack, const Reservoir& reservoir,
                         std::span<const float> weights);

// p + lambda * p_token, left unnormalized.
Vector correct(std::span<const float> probs, std::span<const float> token_probs, double lambda);

}  // namespace tca
