#include "tca/correction.hpp"

#include <algorithm>
#include <cmath>

#include "tca/errors.hpp"
#include "tca/reservoir.hpp"

namespace tca {

std::string to_string(LayerEmphasis e) { return e == LayerEmphasis::shallow ? "shallow" : "deep"; }

LayerEmphasis parse_emphasis(const std::string& s) {
    if (s == "shallow") return LayerEmphasis::shallow;
    if (s == "deep") return LayerEmphasis::deep;
    throw InputError("unknown layer emphasis '" + s + "'");
}

void CorrectionConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be >= 0");
    if (!(beta > 0.0)) throw InputError("beta must be > 0");
}

Vector layer_weights(double beta, std::size_t layers, LayerEmphasis direction) {
    if (!(beta > 0.0)) throw DomainError("beta must be positive");
    if (layers == 0) return {};
    // Exponents are shifted so the dominant layer sits at exp(0); the
    // normalization cancels the shift and nothing overflows.
    std::vector<double> raw(layers);
    double sum = 0.0;
    for (std::size_t i = 0; i < layers; ++i) {
        const double l = static_cast<double>(i + 1);
        const double exponent = direction == LayerEmphasis::deep
                                    ? (l - static_cast<double>(layers)) / beta
                                    : (1.0 - l) / beta;
        raw[i] = std::exp(exponent);
        sum += raw[i];
    }
    Vector w(layers);
    for (std::size_t i = 0; i < layers; ++i) w[i] = static_cast<float>(raw[i] / sum);
    return w;
}

Vector token_level_probs(const Matrix& anchor_stack, const Reservoir& reservoir,
                         std::span<const float> weights) {
    if (weights.size() != anchor_stack.rows()) {
        throw ShapeError("layer weights do not match the anchor stack depth");
    }
    Vector out(reservoir.classes(), 0.0f);
    for (std::size_t c = 0; c < reservoir.classes(); ++c) {
        const auto records = reservoir.buffer(c);
        if (records.empty()) continue;
        double total = 0.0;
        for (const auto& rec : records) {
            if (rec.anchor_stack.rows() != anchor_stack.rows() ||
                rec.anchor_stack.cols() != anchor_stack.cols()) {
                throw ShapeError("stored anchor stack shape differs from the sample's");
            }
            double s = 0.0;
            for (std::size_t l = 0; l < anchor_stack.rows(); ++l) {
                s += static_cast<double>(weights[l]) *
                     cosine_or_zero(anchor_stack.row(l), rec.anchor_stack.row(l));
            }
            total += s;
        }
        // Float layer weights can sum to a hair above 1.
        out[c] = static_cast<float>(std::clamp(total / static_cast<double>(records.size()), -1.0, 1.0));
    }
    return out;
}

Vector correct(std::span<const float> probs, std::span<const float> token_probs, double lambda) {
    if (probs.size() != token_probs.size()) throw ShapeError("correction vectors differ in length");
    Vector out(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c) {
        out[c] = static_cast<float>(probs[c] + lambda * static_cast<double>(token_probs[c]));
    }
    return out;
}

}  // namespace tca
