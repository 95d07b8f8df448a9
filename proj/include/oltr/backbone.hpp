#pragma once

// Direct-feature extractors. Both kinds end in a C x H x W feature map
// (C = embed_dim); modulated attention is spliced in before global average
// pooling when enabled.

#include <random>
#include <vector>

#include "oltr/attention.hpp"
#include "oltr/config.hpp"

namespace oltr {

enum class BackboneKind { Mlp, TinyConv };

struct BackboneSpec {
  BackboneKind kind = BackboneKind::Mlp;
  int embed_dim = 32;
  // mlp
  int input_dim = 32;
  std::vector<int> hidden = {64, 64};
  int map_height = 2;
  int map_width = 2;
  // tiny_conv: 3x3 stride-2 blocks, last block widens to embed_dim
  int input_channels = 3;
  int input_size = 32;
  std::vector<int> conv_widths = {16, 32, 64};

  static BackboneSpec from_config(const Config& c) {
    BackboneSpec s;
    s.kind = c.backbone == "tiny_conv" ? BackboneKind::TinyConv : BackboneKind::Mlp;
    s.embed_dim = c.embed_dim;
    s.input_dim = c.input_dim;
    s.hidden = {c.hidden_dim, c.hidden_dim};
    s.map_height = c.map_height;
    s.map_width = c.map_width;
    s.input_channels = c.input_channels;
    s.input_size = c.input_size;
    s.conv_widths = parse_int_list("conv_widths", c.conv_widths);
    return s;
  }

  int input_size_flat() const {
    return kind == BackboneKind::Mlp ? input_dim : input_channels * input_size * input_size;
  }

  static int conv_out(int in) { return (in - 1) / 2 + 1; }

  /// Spatial side of the last feature map.
  int final_side() const {
    int side = input_size;
    for (std::size_t i = 0; i <= conv_widths.size(); ++i) side = conv_out(side);
    return side;
  }
};

struct DenseLayer {
  Mat weight;
  Vec bias;
};

struct BackboneParams {
  std::vector<DenseLayer> layers;  // mlp: affine layers; conv: weight is C_out x (C_in*9)

  static BackboneParams random(const BackboneSpec& spec, std::mt19937_64& rng) {
    BackboneParams p;
    if (spec.kind == BackboneKind::Mlp) {
      int in = spec.input_dim;
      for (int h : spec.hidden) {
        p.layers.push_back({he_init(h, in, rng), Vec::Zero(h)});
        in = h;
      }
      const int out = spec.embed_dim * spec.map_height * spec.map_width;
      p.layers.push_back({he_init(out, in, rng), Vec::Zero(out)});
    } else {
      int in = spec.input_channels;
      std::vector<int> widths = spec.conv_widths;
      widths.push_back(spec.embed_dim);
      for (int w : widths) {
        p.layers.push_back({he_init(w, in * 9, rng), Vec::Zero(w)});
        in = w;
      }
    }
    return p;
  }

  BackboneParams zeros_like() const {
    BackboneParams z;
    for (const auto& l : layers) z.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    return z;
  }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      f("backbone." + std::to_string(i) + ".weight", view(layers[i].weight));
      f("backbone." + std::to_string(i) + ".bias", view(layers[i].bias));
    }
  }
};

namespace conv {

/// Unfolds 3x3 stride-2 pad-1 patches into columns (row = c*9 + ky*3 + kx).
inline Mat im2col(const Mat& x, int channels, int side) {
  const int out = BackboneSpec::conv_out(side);
  Mat cols = Mat::Zero(channels * 9, out * out);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int oy = 0; oy < out; ++oy)
          for (int ox = 0; ox < out; ++ox) {
            const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
            if (iy < 0 || ix < 0 || iy >= side || ix >= side) continue;
            cols(c * 9 + ky * 3 + kx, oy * out + ox) = x(c, iy * side + ix);
          }
  return cols;
}

inline Mat col2im(const Mat& cols, int channels, int side) {
  const int out = BackboneSpec::conv_out(side);
  Mat x = Mat::Zero(channels, side * side);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int oy = 0; oy < out; ++oy)
          for (int ox = 0; ox < out; ++ox) {
            const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
            if (iy < 0 || ix < 0 || iy >= side || ix >= side) continue;
            x(c, iy * side + ix) += cols(c * 9 + ky * 3 + kx, oy * out + ox);
          }
  return x;
}

}  // namespace conv

struct BackboneCache {
  std::vector<Mat> inputs;  // per layer: layer input (mlp: column vector; conv: im2col columns)
  std::vector<Mat> pre;     // per layer: pre-activation
  FeatureMap last;          // last feature map before attention
  bool attention = false;
  ModulatedAttentionCache att;
  FeatureMap attended;
};

inline void check_input(const BackboneSpec& spec, const BackboneParams& p, const Vec& input) {
  require_shape(input.size() == spec.input_size_flat(), "backbone: input has " + std::to_string(input.size()) +
                                                            " entries, expected " +
                                                            std::to_string(spec.input_size_flat()));
  const std::size_t expected = spec.kind == BackboneKind::Mlp ? spec.hidden.size() + 1 : spec.conv_widths.size() + 1;
  require_shape(p.layers.size() == expected, "backbone: parameter layer count does not match spec");
}

/// Runs the backbone up to the last feature map.
inline FeatureMap feature_map(const BackboneSpec& spec, const BackboneParams& p, const Vec& input,
                              BackboneCache* cache = nullptr) {
  check_input(spec, p, input);
  BackboneCache local;
  BackboneCache& c = cache ? *cache : local;
  c.inputs.clear();
  c.pre.clear();
  if (spec.kind == BackboneKind::Mlp) {
    Vec h = input;
    for (const auto& layer : p.layers) {
      require_shape(layer.weight.cols() == h.size(), "backbone: dense layer width mismatch");
      c.inputs.push_back(h);
      Vec z = layer.weight * h + layer.bias;
      c.pre.push_back(z);
      h = z.cwiseMax(0.0);
    }
    Mat values = Eigen::Map<const Mat>(h.data(), spec.embed_dim, spec.map_height * spec.map_width);
    c.last = FeatureMap(values, spec.map_height, spec.map_width);
  } else {
    Mat x = Eigen::Map<const Mat>(input.data(), spec.input_channels, spec.input_size * spec.input_size);
    int side = spec.input_size;
    int channels = spec.input_channels;
    for (const auto& layer : p.layers) {
      require_shape(layer.weight.cols() == channels * 9, "backbone: conv layer width mismatch");
      Mat cols = conv::im2col(x, channels, side);
      Mat z = layer.weight * cols;
      z.colwise() += layer.bias;
      c.inputs.push_back(std::move(cols));
      c.pre.push_back(z);
      x = z.cwiseMax(0.0);
      side = BackboneSpec::conv_out(side);
      channels = static_cast<int>(layer.weight.rows());
    }
    c.last = FeatureMap(x, side, side);
  }
  return c.last;
}

inline Vec global_average_pool(const FeatureMap& f) { return f.values.rowwise().mean(); }

/// Direct feature: backbone, optional modulated attention on the last map, global average pooling.
inline Vec extract(const BackboneSpec& spec, const Vec& input, const BackboneParams& bp,
                   const AttentionParams& ap, bool attention_enabled, BackboneCache* cache = nullptr) {
  BackboneCache local;
  BackboneCache& c = cache ? *cache : local;
  FeatureMap f = feature_map(spec, bp, input, &c);
  c.attention = attention_enabled;
  if (attention_enabled) {
    c.attended = modulated_attention(f, ap, &c.att);
    return global_average_pool(c.attended);
  }
  return global_average_pool(f);
}

/// Backpropagates dL/d(direct feature); returns dL/d(input).
inline Vec extract_backward(const BackboneSpec& spec, const BackboneCache& c, const BackboneParams& bp,
                            const AttentionParams& ap, const Vec& d_feature, BackboneParams& bgrads,
                            AttentionParams& agrads) {
  const int n = c.last.positions();
  Mat d_map = d_feature.replicate(1, n) / static_cast<double>(n);
  if (c.attention) d_map = modulated_attention_backward(c.att, ap, d_map, agrads);

  if (spec.kind == BackboneKind::Mlp) {
    Vec d_h = Eigen::Map<const Vec>(d_map.data(), d_map.size());
    for (int i = static_cast<int>(bp.layers.size()) - 1; i >= 0; --i) {
      const Vec d_z = (c.pre[i].array() > 0.0).select(d_h, 0.0);
      bgrads.layers[i].weight += d_z * c.inputs[i].transpose();
      bgrads.layers[i].bias += d_z;
      d_h = bp.layers[i].weight.transpose() * d_z;
    }
    return d_h;
  }

  Mat d_x = d_map;
  std::vector<int> sides{spec.input_size};
  for (std::size_t i = 0; i + 1 < bp.layers.size(); ++i) sides.push_back(BackboneSpec::conv_out(sides.back()));
  for (int i = static_cast<int>(bp.layers.size()) - 1; i >= 0; --i) {
    const Mat d_z = (c.pre[i].array() > 0.0).select(d_x, 0.0);
    bgrads.layers[i].weight += d_z * c.inputs[i].transpose();
    bgrads.layers[i].bias += d_z.rowwise().sum();
    const Mat d_cols = bp.layers[i].weight.transpose() * d_z;
    const int in_channels = static_cast<int>(bp.layers[i].weight.cols() / 9);
    d_x = conv::col2im(d_cols, in_channels, sides[i]);
  }
  return Eigen::Map<const Vec>(d_x.data(), d_x.size());
}

}  // namespace oltr
