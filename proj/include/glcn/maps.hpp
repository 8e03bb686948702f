#pragma once

// Construction of the aggregation-network inputs: location indicator maps,
// embedding maps and their channel-wise concatenation.
//
// Grid cell (i,j) spans image rows [i*H/gh, (i+1)*H/gh) and the analogous
// columns; H and W must divide evenly into the grid. The indicator value is
// the fraction of the cell's pixels covered by the window footprint.

#include <cstdint>
#include <string>
#include <vector>

#include "glcn/geometry.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

inline constexpr std::int64_t kEmbeddingDim = 32;

template <typename T>
struct SaliencyPair {
    Tensor<T> malignant; // [gh, gw], entries in [0,1]
    Tensor<T> benign;    // [gh, gw], entries in [0,1]
};

// Which map families feed the aggregation network.
struct MapSelection {
    bool indicator = false;
    bool saliency = false;
    bool embedding = false;

    std::int64_t channels() const {
        return (indicator ? 1 : 0) + (saliency ? 2 : 0) + (embedding ? kEmbeddingDim : 0);
    }

    bool any() const { return indicator || saliency || embedding; }

    // Canonical name, e.g. "embedding+saliency" -> "saliency+embedding".
    std::string name() const {
        std::string s;
        auto append = [&](const char* part) {
            if (!s.empty()) s += "+";
            s += part;
        };
        if (indicator) append("indicator");
        if (saliency) append("saliency");
        if (embedding) append("embedding");
        return s.empty() ? "none" : s;
    }

    std::vector<std::string> legend() const {
        std::vector<std::string> names;
        if (indicator) names.push_back("indicator");
        if (saliency) {
            names.push_back("saliency_malignant");
            names.push_back("saliency_benign");
        }
        if (embedding)
            for (std::int64_t k = 0; k < kEmbeddingDim; ++k) names.push_back(cat("embedding_", k));
        return names;
    }

    static MapSelection parse(const std::string& spec) {
        MapSelection sel;
        std::size_t pos = 0;
        while (pos <= spec.size()) {
            std::size_t next = spec.find('+', pos);
            std::string part = spec.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (part == "indicator") sel.indicator = true;
            else if (part == "saliency") sel.saliency = true;
            else if (part == "embedding") sel.embedding = true;
            else if (!part.empty()) fail("unknown map kind '", part, "' in selection '", spec, "'");
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        GLCN_CHECK(sel.any(), "map selection must not be empty: '", spec, "'");
        return sel;
    }
};

// I[i,j] = covered pixels of cell (i,j) / pixels per cell.
template <typename T>
Tensor<T> location_indicator(const Window& window, std::int64_t height, std::int64_t width,
                             std::int64_t grid_h, std::int64_t grid_w) {
    GLCN_CHECK(height % grid_h == 0 && width % grid_w == 0, "image dims ", height, "x", width,
               " must divide into grid ", grid_h, "x", grid_w);
    const std::int64_t cell_h = height / grid_h, cell_w = width / grid_w;
    Tensor<T> ind({grid_h, grid_w});
    for_each_covered_pixel(window, height, width, [&](std::int64_t r, std::int64_t c) {
        ind.data[std::size_t((r / cell_h) * grid_w + (c / cell_w))] += T(1);
    });
    const T per_cell = T(cell_h * cell_w);
    for (auto& v : ind.data) v /= per_cell;
    return ind;
}

// E[i,j,k] = h_k wherever I[i,j] > 0, else 0. The replacement is binary:
// coverage fractions do not scale the embedding.
template <typename T>
Tensor<T> embedding_map(const Tensor<T>& indicator, const std::vector<T>& embedding) {
    GLCN_CHECK(indicator.rank() == 2, "indicator map must be [gh,gw]");
    GLCN_CHECK(std::int64_t(embedding.size()) == kEmbeddingDim, "embedding must have ", kEmbeddingDim,
               " entries, got ", embedding.size());
    const std::int64_t gh = indicator.shape[0], gw = indicator.shape[1];
    Tensor<T> emb({gh, gw, kEmbeddingDim});
    for (std::int64_t p = 0; p < gh * gw; ++p) {
        if (indicator.data[std::size_t(p)] <= T(0)) continue;
        T* cell = emb.data.data() + p * kEmbeddingDim;
        for (std::int64_t k = 0; k < kEmbeddingDim; ++k) cell[k] = embedding[std::size_t(k)];
    }
    return emb;
}

template <typename T>
struct AssembledInput {
    Tensor<T> x; // [gh, gw, M]
    std::vector<std::string> legend;
};

// Concatenates the selected maps along the channel dimension in the fixed
// order (I | S_m, S_b | E_1..E_32); unselected maps are skipped.
template <typename T>
AssembledInput<T> assemble(const MapSelection& sel, const Tensor<T>* indicator,
                           const SaliencyPair<T>* saliency, const Tensor<T>* embedding) {
    GLCN_CHECK(sel.any(), "assemble requires a nonempty map selection");
    std::int64_t gh = -1, gw = -1;
    auto check_grid = [&](const Shape& s, const char* what) {
        GLCN_CHECK(s.size() >= 2, what, " has wrong rank");
        if (gh < 0) {
            gh = s[0];
            gw = s[1];
        } else {
            GLCN_CHECK(s[0] == gh && s[1] == gw, "grid mismatch for ", what, ": expected ", gh, "x", gw,
                       ", got ", s[0], "x", s[1]);
        }
    };
    if (sel.indicator) {
        GLCN_CHECK(indicator != nullptr, "indicator map selected but missing");
        check_grid(indicator->shape, "indicator map");
    }
    if (sel.saliency) {
        GLCN_CHECK(saliency != nullptr, "saliency maps selected but missing");
        check_grid(saliency->malignant.shape, "malignant saliency map");
        check_grid(saliency->benign.shape, "benign saliency map");
    }
    if (sel.embedding) {
        GLCN_CHECK(embedding != nullptr, "embedding map selected but missing");
        check_grid(embedding->shape, "embedding map");
        GLCN_CHECK(embedding->shape.size() == 3 && embedding->shape[2] == kEmbeddingDim,
                   "embedding map must be [gh,gw,32], got ", shape_str(embedding->shape));
    }

    AssembledInput<T> out;
    const std::int64_t m = sel.channels();
    out.x = Tensor<T>({gh, gw, m});
    out.legend = sel.legend();

    for (std::int64_t p = 0; p < gh * gw; ++p) {
        T* cell = out.x.data.data() + p * m;
        std::int64_t ch = 0;
        if (sel.indicator) cell[ch++] = indicator->data[std::size_t(p)];
        if (sel.saliency) {
            cell[ch++] = saliency->malignant.data[std::size_t(p)];
            cell[ch++] = saliency->benign.data[std::size_t(p)];
        }
        if (sel.embedding) {
            const T* emb = embedding->data.data() + p * kEmbeddingDim;
            for (std::int64_t k = 0; k < kEmbeddingDim; ++k) cell[ch++] = emb[k];
        }
    }
    return out;
}

// Pulls one named source channel back out of an assembled input.
template <typename T>
Tensor<T> extract_channel(const AssembledInput<T>& assembled, const std::string& name) {
    const std::int64_t m = std::int64_t(assembled.legend.size());
    std::int64_t index = -1;
    for (std::int64_t i = 0; i < m; ++i)
        if (assembled.legend[std::size_t(i)] == name) index = i;
    GLCN_CHECK(index >= 0, "channel '", name, "' not present in assembled input");
    const std::int64_t gh = assembled.x.shape[0], gw = assembled.x.shape[1];
    Tensor<T> out({gh, gw});
    for (std::int64_t p = 0; p < gh * gw; ++p) out.data[std::size_t(p)] = assembled.x.data[std::size_t(p * m + index)];
    return out;
}

} // namespace glcn
