#pragma once

// Plain-loop spatial-only spiking transformer used as an oracle: each
// step's Q/K/V see only that step's input, every neuron has the same fixed
// time constant, and the attention map is used raw. It shares no code with
// the library beyond the Tensor container.

#include <map>
#include <string>
#include <vector>

#include "dista/tensor.hpp"

namespace ref {

using Mat = std::vector<std::vector<float>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<float>(c, 0.0f)); }

inline Mat from_tensor(const dista::Tensor<float>& t) {
  Mat m = zeros(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline dista::Tensor<float> to_tensor(const Mat& m) {
  dista::Tensor<float> t({m.size(), m.empty() ? 0 : m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t(i, j) = m[i][j];
  return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
      c[i][j] = acc;
    }
  return c;
}

inline Mat linear(const Mat& x, const Mat& w, const std::vector<float>& b) {
  Mat y = matmul(x, w);
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return y;
}

struct BatchNorm {
  std::vector<float> gamma, beta, mean, var;
  float momentum = 0.1f, eps = 1e-5f;

  Mat train(const Mat& x) {
    const std::size_t rows = x.size(), ch = x[0].size();
    std::vector<float> mu(ch, 0.0f), sig(ch, 0.0f);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) mu[c] += x[r][c];
    for (auto& m : mu) m /= static_cast<float>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) sig[c] += (x[r][c] - mu[c]) * (x[r][c] - mu[c]);
    for (std::size_t c = 0; c < ch; ++c) {
      sig[c] /= static_cast<float>(rows);
      mean[c] = (1.0f - momentum) * mean[c] + momentum * mu[c];
      var[c] = (1.0f - momentum) * var[c] + momentum * sig[c];
    }
    Mat y = zeros(rows, ch);
    for (std::size_t c = 0; c < ch; ++c) {
      const float inv = 1.0f / std::sqrt(sig[c] + eps);
      for (std::size_t r = 0; r < rows; ++r) y[r][c] = (x[r][c] - mu[c]) * inv * gamma[c] + beta[c];
    }
    return y;
  }
};

/// LIF with one shared time constant over a whole sequence.
inline std::vector<Mat> lif(const std::vector<Mat>& currents, float tau, float theta) {
  const float decay = 1.0f - 1.0f / tau;
  std::vector<Mat> spikes;
  Mat v = zeros(currents[0].size(), currents[0][0].size());
  Mat s = v;
  for (const auto& in : currents) {
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        v[i][j] = decay * v[i][j] * (1.0f - s[i][j]) + in[i][j];
        s[i][j] = v[i][j] >= theta ? 1.0f : 0.0f;
      }
    spikes.push_back(s);
  }
  return spikes;
}

struct Stage {
  Mat w;
  std::vector<float> b;
  BatchNorm bn;

  std::vector<Mat> run(const std::vector<Mat>& x, float tau, float theta) {
    std::vector<Mat> cur;
    for (const auto& xt : x) cur.push_back(bn.train(linear(xt, w, b)));
    return lif(cur, tau, theta);
  }
};

struct Attention {
  Mat wq, wk, wv;
  Stage out;
  std::size_t heads = 1;
  float scale = 0.125f;

  std::vector<Mat> run(const std::vector<Mat>& x, std::size_t batch, std::size_t tokens, float tau, float theta) {
    std::vector<Mat> qc, kc, vc;
    for (const auto& xt : x) {
      qc.push_back(matmul(xt, wq));
      kc.push_back(matmul(xt, wk));
      vc.push_back(matmul(xt, wv));
    }
    const auto q = lif(qc, tau, theta), k = lif(kc, tau, theta), v = lif(vc, tau, theta);
    const std::size_t dim = x[0][0].size(), d = dim / heads;
    std::vector<Mat> mixed;
    for (std::size_t t = 0; t < x.size(); ++t) {
      Mat o = zeros(batch * tokens, dim);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t j = 0; j < tokens; ++j) {
              float a = 0.0f;
              for (std::size_t c = h * d; c < (h + 1) * d; ++c) a += q[t][b * tokens + i][c] * k[t][b * tokens + j][c];
              for (std::size_t c = h * d; c < (h + 1) * d; ++c) o[b * tokens + i][c] += a * v[t][b * tokens + j][c];
            }
            for (std::size_t c = h * d; c < (h + 1) * d; ++c) o[b * tokens + i][c] *= scale;
          }
      mixed.push_back(o);
    }
    return out.run(mixed, tau, theta);
  }
};

struct Block {
  Attention attn;
  Stage fc1, fc2;
};

inline std::vector<Mat> add(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  std::vector<Mat> out = a;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i)
      for (std::size_t j = 0; j < a[t][i].size(); ++j) out[t][i][j] = a[t][i][j] + b[t][i][j];
  return out;
}

struct Model {
  Stage embed;
  std::vector<Block> blocks;
  Mat head_w;
  std::vector<float> head_b;
  float tau = 2.0f, theta = 1.0f;

  // Layer outputs in the order the library traces them.
  std::vector<std::pair<std::string, std::vector<Mat>>> trace;

  Mat forward(const std::vector<Mat>& steps, std::size_t batch, std::size_t tokens) {
    trace.clear();
    auto x = embed.run(steps, tau, theta);
    trace.emplace_back("embed", x);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string name = "block" + std::to_string(l);
      auto a = blocks[l].attn.run(x, batch, tokens, tau, theta);
      auto y = add(a, x);
      auto m = blocks[l].fc2.run(blocks[l].fc1.run(y, tau, theta), tau, theta);
      auto z = add(m, y);
      trace.emplace_back(name + ".attn", a);
      trace.emplace_back(name + ".residual1", y);
      trace.emplace_back(name + ".mlp", m);
      trace.emplace_back(name + ".residual2", z);
      x = z;
    }
    const std::size_t dim = x[0][0].size();
    Mat pooled = zeros(batch, dim);
    for (const auto& xt : x)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t n = 0; n < tokens; ++n)
          for (std::size_t c = 0; c < dim; ++c) pooled[b][c] += xt[b * tokens + n][c];
    const float denom = static_cast<float>(x.size() * tokens);
    for (auto& row : pooled)
      for (auto& v : row) v /= denom;
    return linear(pooled, head_w, head_b);
  }
};

}  // namespace ref
