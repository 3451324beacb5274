#include "dgcvc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dgcvc/rng.hpp"
#include "json.hpp"

namespace dgcvc::eval {

namespace {

constexpr double kMcdScale = 10.0 / 2.302585092994046;  // 10 / ln(10)

double local_cost(const Mat& a, const Mat& b, int i, int j) {
  double s = 0.0;
  for (int d = 1; d < a.cols; ++d) {
    const double diff = a(i, d) - b(j, d);
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace

AlignmentPath dtw_align(const signal::McepSequence& a, const signal::McepSequence& b) {
  const int t1 = a.coeffs.rows, t2 = b.coeffs.rows;
  if (t1 < 1 || t2 < 1) throw std::invalid_argument("dtw_align: empty sequence");
  if (a.coeffs.cols != b.coeffs.cols) throw std::invalid_argument("dtw_align: coefficient order mismatch");

  Mat acc(t1, t2);
  // choice per cell: 0 diagonal, 1 i-step, 2 j-step
  std::vector<uint8_t> choice(static_cast<size_t>(t1) * t2, 0);
  for (int i = 0; i < t1; ++i) {
    for (int j = 0; j < t2; ++j) {
      const double c = local_cost(a.coeffs, b.coeffs, i, j);
      if (i == 0 && j == 0) {
        acc(0, 0) = c;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      uint8_t pick = 0;
      if (i > 0 && j > 0 && acc(i - 1, j - 1) < best) {
        best = acc(i - 1, j - 1);
        pick = 0;
      }
      if (i > 0 && acc(i - 1, j) < best) {
        best = acc(i - 1, j);
        pick = 1;
      }
      if (j > 0 && acc(i, j - 1) < best) {
        best = acc(i, j - 1);
        pick = 2;
      }
      acc(i, j) = best + c;
      choice[static_cast<size_t>(i) * t2 + j] = pick;
    }
  }

  AlignmentPath path;
  int i = t1 - 1, j = t2 - 1;
  path.steps.push_back({i, j});
  while (i > 0 || j > 0) {
    const uint8_t pick = choice[static_cast<size_t>(i) * t2 + j];
    if (pick == 0 && i > 0 && j > 0) {
      --i;
      --j;
    } else if (pick == 1 && i > 0) {
      --i;
    } else {
      --j;
    }
    path.steps.push_back({i, j});
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

double dtw_mcd(const signal::McepSequence& a, const signal::McepSequence& b) {
  AlignmentPath path = dtw_align(a, b);
  double total = 0.0;
  for (const auto& [i, j] : path.steps) {
    double s = 0.0;
    for (int d = 1; d < a.coeffs.cols; ++d) {
      const double diff = a.coeffs(i, d) - b.coeffs(j, d);
      s += diff * diff;
    }
    total += kMcdScale * std::sqrt(2.0 * s);
  }
  return total / static_cast<double>(path.steps.size());
}

std::optional<double> f0_mae(const signal::F0Track& a, const signal::F0Track& b, const AlignmentPath& path) {
  double total = 0.0;
  int n = 0;
  for (const auto& [i, j] : path.steps) {
    if (i >= static_cast<int>(a.voiced.size()) || j >= static_cast<int>(b.voiced.size()))
      throw std::invalid_argument("f0_mae: path index outside the f0 tracks");
    if (a.voiced[i] && b.voiced[j]) {
      total += std::abs(a.f0_hz[i] - b.f0_hz[j]);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

// ---------------------------------------------------------------------------
// 2-D projection
// ---------------------------------------------------------------------------

namespace {

// cyclic Jacobi eigensolver for a symmetric matrix; returns eigenvalues and
// eigenvectors (columns), deterministic
void jacobi_eigen(Mat a, std::vector<double>& eigvals, Mat& eigvecs) {
  const int n = a.rows;
  eigvecs = Mat(n, n);
  for (int i = 0; i < n; ++i) eigvecs(i, i) = 1.0;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = eigvecs(k, p), vkq = eigvecs(k, q);
          eigvecs(k, p) = c * vkp - s * vkq;
          eigvecs(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (int i = 0; i < n; ++i) eigvals[i] = a(i, i);
}

std::vector<ScatterRow> pca_project(const std::vector<EmbeddingRow>& rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].vec.size());
  Mat centered(n, d);
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (int j = 0; j < d; ++j) mean[j] += r.vec[j];
  for (double& m : mean) m /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) centered(i, j) = rows[i].vec[j] - mean[j];

  Mat cov(d, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double va = centered(i, a);
      if (va == 0.0) continue;
      for (int b = 0; b < d; ++b) cov(a, b) += va * centered(i, b);
    }
  for (auto& v : cov.data) v /= n;

  std::vector<double> eigvals;
  Mat eigvecs;
  jacobi_eigen(cov, eigvals, eigvecs);
  int i1 = 0, i2 = -1;
  for (int i = 1; i < d; ++i)
    if (eigvals[i] > eigvals[i1]) i1 = i;
  for (int i = 0; i < d; ++i) {
    if (i == i1) continue;
    if (i2 < 0 || eigvals[i] > eigvals[i2]) i2 = i;
  }

  auto axis = [&](int col) {
    std::vector<double> v(d);
    for (int j = 0; j < d; ++j) v[j] = eigvecs(j, col);
    // sign convention: largest-magnitude component positive
    int arg = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0)
      for (double& x : v) x = -x;
    return v;
  };
  const auto v1 = axis(i1), v2 = axis(i2);
  const bool degenerate1 = eigvals[i1] < 1e-18;
  const bool degenerate2 = eigvals[i2] < 1e-18;

  std::vector<ScatterRow> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    ScatterRow s;
    s.id = rows[i].id;
    s.group = rows[i].group;
    s.converted = rows[i].converted;
    for (int j = 0; j < d; ++j) {
      s.x += degenerate1 ? 0.0 : centered(i, j) * v1[j];
      s.y += degenerate2 ? 0.0 : centered(i, j) * v2[j];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ScatterRow> tsne_project(const std::vector<EmbeddingRow>& rows, uint64_t seed, double perplexity) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].vec.size());

  Mat d2(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = rows[i].vec[k] - rows[j].vec[k];
        s += diff * diff;
      }
      d2(i, j) = s;
    }

  // per-row bandwidth from the perplexity target
  Mat p(n, n);
  const double target = std::log(std::min(perplexity, static_cast<double>(n - 1)));
  for (int i = 0; i < n; ++i) {
    double lo = 1e-20, hi = 1e20, beta = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0.0, hsum = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double pij = std::exp(-beta * d2(i, j));
        sum += pij;
        hsum += beta * d2(i, j) * pij;
      }
      const double entropy = (sum > 0) ? std::log(sum) + hsum / sum : 0.0;
      if (std::abs(entropy - target) < 1e-5) break;
      if (entropy > target)
        lo = beta;
      else
        hi = beta;
      beta = (hi > 1e19) ? beta * 2 : 0.5 * (lo + hi);
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) sum += std::exp(-beta * d2(i, j));
    for (int j = 0; j < n; ++j) p(i, j) = (j == i || sum <= 0) ? 0.0 : std::exp(-beta * d2(i, j)) / sum;
  }
  // symmetrize
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) p(i, j) = std::max((p(i, j) + p(j, i)) / (2.0 * n), 1e-12);

  auto rng = make_rng(seed, "tsne.init");
  std::normal_distribution<double> init(0.0, 1e-4);
  Mat y(n, 2), vel(n, 2), grad(n, 2);
  for (auto& v : y.data) v = init(rng);

  for (int iter = 0; iter < 500; ++iter) {
    const double exaggeration = iter < 100 ? 4.0 : 1.0;
    Mat q(n, n);
    double qsum = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double dy0 = y(i, 0) - y(j, 0), dy1 = y(i, 1) - y(j, 1);
        q(i, j) = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        qsum += q(i, j);
      }
    grad.fill(0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double qij = std::max(q(i, j) / qsum, 1e-12);
        const double coef = 4.0 * (exaggeration * p(i, j) - qij) * q(i, j);
        grad(i, 0) += coef * (y(i, 0) - y(j, 0));
        grad(i, 1) += coef * (y(i, 1) - y(j, 1));
      }
    const double momentum = iter < 250 ? 0.5 : 0.8;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) {
        vel(i, k) = momentum * vel(i, k) - 100.0 * grad(i, k);
        y(i, k) += vel(i, k);
      }
  }

  std::vector<ScatterRow> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back({rows[i].id, rows[i].group, rows[i].converted, y(i, 0), y(i, 1)});
  return out;
}

}  // namespace

std::vector<ScatterRow> project_2d(const std::vector<EmbeddingRow>& rows, const std::string& method, uint64_t seed,
                                   double perplexity) {
  if (rows.size() < 3) throw std::invalid_argument("project_2d: need at least 3 rows");
  const size_t d = rows[0].vec.size();
  for (const auto& r : rows)
    if (r.vec.size() != d) throw std::invalid_argument("project_2d: ragged embedding table");
  if (method == "pca") return pca_project(rows);
  if (method == "tsne") {
    // identical rows must land on identical coordinates; collapse duplicates
    std::vector<EmbeddingRow> unique_rows;
    std::vector<int> assignment(rows.size(), -1);
    for (size_t i = 0; i < rows.size(); ++i) {
      for (size_t u = 0; u < unique_rows.size(); ++u) {
        if (unique_rows[u].vec == rows[i].vec) {
          assignment[i] = static_cast<int>(u);
          break;
        }
      }
      if (assignment[i] < 0) {
        assignment[i] = static_cast<int>(unique_rows.size());
        unique_rows.push_back(rows[i]);
      }
    }
    std::vector<ScatterRow> base;
    if (unique_rows.size() < 3) {
      base.resize(unique_rows.size());
      for (size_t u = 0; u < unique_rows.size(); ++u) base[u] = {unique_rows[u].id, unique_rows[u].group,
                                                                 unique_rows[u].converted, 0.0, 0.0};
    } else {
      base = tsne_project(unique_rows, seed, perplexity);
    }
    std::vector<ScatterRow> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      out[i] = base[assignment[i]];
      out[i].id = rows[i].id;
      out[i].group = rows[i].group;
      out[i].converted = rows[i].converted;
    }
    return out;
  }
  throw std::invalid_argument("project_2d: unknown method '" + method + "' (expected pca or tsne)");
}

std::vector<GroupStats> similarity_stats(const std::vector<EmbeddingRow>& rows) {
  std::map<std::string, std::vector<const EmbeddingRow*>> truth, conv;
  for (const auto& r : rows) (r.converted ? conv : truth)[r.group].push_back(&r);
  if (truth.empty()) throw std::invalid_argument("similarity_stats: no ground-truth rows");

  std::map<std::string, std::vector<double>> centroids;
  for (const auto& [g, members] : truth) {
    std::vector<double> c(members[0]->vec.size(), 0.0);
    for (const auto* m : members)
      for (size_t j = 0; j < c.size(); ++j) c[j] += m->vec[j];
    for (double& v : c) v /= members.size();
    centroids[g] = std::move(c);
  }

  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  };

  std::vector<GroupStats> out;
  for (const auto& [g, members] : conv) {
    auto it = centroids.find(g);
    if (it == centroids.end()) continue;
    GroupStats st;
    st.group = g;
    st.n_converted = static_cast<int>(members.size());
    double inter_total = 0.0;
    bool has_other = centroids.size() > 1;
    for (const auto* m : members) {
      st.intra += dist(m->vec, it->second);
      if (has_other) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& [h, c] : centroids)
          if (h != g) nearest = std::min(nearest, dist(m->vec, c));
        inter_total += nearest;
      }
    }
    st.intra /= members.size();
    if (has_other) st.inter = inter_total / members.size();
    out.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {
std::optional<double> mean_over(const std::vector<PairResult>& pairs, bool want_inter, bool use_f0) {
  double total = 0.0;
  int n = 0;
  for (const auto& p : pairs) {
    if (p.gender_tag.empty()) continue;
    const bool inter = (p.gender_tag == "F2M" || p.gender_tag == "M2F");
    if (inter != want_inter) continue;
    if (use_f0) {
      if (!p.f0_mae_hz) continue;
      total += *p.f0_mae_hz;
    } else {
      total += p.mcd;
    }
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / n;
}
}  // namespace

double EvalReport::avg_mcd() const {
  double t = 0.0;
  for (const auto& p : pairs) t += p.mcd;
  return pairs.empty() ? 0.0 : t / pairs.size();
}

std::optional<double> EvalReport::avg_f0_mae() const {
  double t = 0.0;
  int n = 0;
  for (const auto& p : pairs)
    if (p.f0_mae_hz) {
      t += *p.f0_mae_hz;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return t / n;
}

std::optional<double> EvalReport::inter_mcd() const { return mean_over(pairs, true, false); }
std::optional<double> EvalReport::intra_mcd() const { return mean_over(pairs, false, false); }
std::optional<double> EvalReport::inter_f0_mae() const { return mean_over(pairs, true, true); }
std::optional<double> EvalReport::intra_f0_mae() const { return mean_over(pairs, false, true); }

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["config_hash"] = config_hash;
  j["checkpoint_hash"] = checkpoint_hash;
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    nlohmann::ordered_json jp;
    jp["source"] = p.source_path;
    jp["target_speaker"] = p.target_speaker;
    jp["reference"] = p.reference_path;
    jp["gender_tag"] = p.gender_tag;
    jp["mcd_db"] = p.mcd;
    if (p.f0_mae_hz)
      jp["f0_mae_hz"] = *p.f0_mae_hz;
    else
      jp["f0_mae_hz"] = nullptr;
    j["pairs"].push_back(jp);
  }
  auto put_opt = [&](const char* key, std::optional<double> v) {
    if (v)
      j["aggregates"][key] = *v;
    else
      j["aggregates"][key] = nullptr;
  };
  j["aggregates"]["avg_mcd_db"] = avg_mcd();
  put_opt("avg_f0_mae_hz", avg_f0_mae());
  put_opt("inter_mcd_db", inter_mcd());
  put_opt("intra_mcd_db", intra_mcd());
  put_opt("inter_f0_mae_hz", inter_f0_mae());
  put_opt("intra_f0_mae_hz", intra_f0_mae());
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "source,target_speaker,reference,gender_tag,mcd_db,f0_mae_hz\n";
  os.precision(17);
  for (const auto& p : pairs) {
    os << p.source_path << "," << p.target_speaker << "," << p.reference_path << "," << p.gender_tag << "," << p.mcd
       << ",";
    if (p.f0_mae_hz) os << *p.f0_mae_hz;
    os << "\n";
  }
  return os.str();
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.variant = j.at("variant").get<std::string>();
  r.config_hash = j.at("config_hash").get<uint64_t>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<uint64_t>();
  for (const auto& jp : j.at("pairs")) {
    PairResult p;
    p.source_path = jp.at("source").get<std::string>();
    p.target_speaker = jp.at("target_speaker").get<std::string>();
    p.reference_path = jp.at("reference").get<std::string>();
    p.gender_tag = jp.at("gender_tag").get<std::string>();
    p.mcd = jp.at("mcd_db").get<double>();
    if (!jp.at("f0_mae_hz").is_null()) p.f0_mae_hz = jp.at("f0_mae_hz").get<double>();
    r.pairs.push_back(std::move(p));
  }
  return r;
}

}  // namespace dgcvc::eval
