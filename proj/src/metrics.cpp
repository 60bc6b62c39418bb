#include "biref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace biref {

namespace fs = std::filesystem;
using json = nlohmann::json;

void MetricConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
    if (beta2 <= 0.0 || beta2_weighted <= 0.0) throw std::invalid_argument("beta^2 must be > 0");
    if (thresholds < 1) throw std::invalid_argument("threshold count must be >= 1");
    if (hce_gamma < 0) throw std::invalid_argument("HCE tolerance must be >= 0");
}

namespace {

void check_pair(const GrayMap& pred, const GrayMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("metric: prediction/GT size mismatch");
    for (double v : gt.values)
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("metric: GT must be binary");
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

// ------------------------------------------------------------- S-measure

// 2*mean / (mean^2 + 1 + std), sample std over the region's values.
double object_score(const GrayMap& pred, const GrayMap& region, bool complement_pred,
                    bool complement_region) {
    double sum = 0, n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double r = complement_region ? 1.0 - region.values[i] : region.values[i];
        if (r == 0.0) continue;
        sum += complement_pred ? 1.0 - pred.values[i] : pred.values[i];
        n += 1;
    }
    if (n == 0) return 0.0;
    double x = sum / n;
    double ss = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double r = complement_region ? 1.0 - region.values[i] : region.values[i];
        if (r == 0.0) continue;
        double v = complement_pred ? 1.0 - pred.values[i] : pred.values[i];
        ss += (v - x) * (v - x);
    }
    double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    return 2.0 * x / (x * x + 1.0 + sd);
}

// SSIM-style block similarity of the region-aware term; exact zero guards
// instead of an epsilon so identical blocks score exactly 1.
double region_block_ssim(const GrayMap& pred, const GrayMap& gt, int r0, int r1, int c0, int c1) {
    const long n = long(r1 - r0) * (c1 - c0);
    if (n <= 0) return 0.0;
    double mx = 0, my = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            mx += pred.at(r, c);
            my += gt.at(r, c);
        }
    mx /= double(n);
    my /= double(n);
    double sx = 0, sy = 0, sxy = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            double dx = pred.at(r, c) - mx, dy = gt.at(r, c) - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    double denom = n > 1 ? double(n - 1) : 1.0;
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    double a = 4.0 * mx * my * sxy;
    double b = (mx * mx + my * my) * (sx + sy);
    if (b == 0.0) return a == 0.0 ? 1.0 : 0.0;
    return a / b;
}

}  // namespace

double s_measure(const GrayMap& pred, const GrayMap& gt, double alpha) {
    check_pair(pred, gt);
    const int H = gt.height, W = gt.width;
    double gt_sum = 0;
    for (double v : gt.values) gt_sum += v;
    double pred_mean = mean_of(pred.values);
    if (gt_sum == 0.0) return 1.0 - pred_mean;
    if (gt_sum == double(H) * W) return pred_mean;

    // object-aware term
    double mu = gt_sum / (double(H) * W);
    double o_fg = object_score(pred, gt, false, false);
    double o_bg = object_score(pred, gt, true, true);
    double s_o = o_bg + mu * (o_fg - o_bg);

    // region-aware term: 4-way split at the GT centroid (split index is the
    // rounded 1-based weighted mean, i.e. the left/top block extent)
    double cr = 0, cc = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (gt.at(r, c) != 0.0) {
                cr += r + 1;
                cc += c + 1;
            }
    int split_r = int(std::lround(cr / gt_sum));
    int split_c = int(std::lround(cc / gt_sum));
    split_r = std::clamp(split_r, 1, H);
    split_c = std::clamp(split_c, 1, W);

    const double total = double(H) * W;
    struct Block { int r0, r1, c0, c1; };
    Block blocks[4] = {{0, split_r, 0, split_c},
                       {0, split_r, split_c, W},
                       {split_r, H, 0, split_c},
                       {split_r, H, split_c, W}};
    double q[4], w[4];
    for (int i = 0; i < 4; ++i) {
        q[i] = region_block_ssim(pred, gt, blocks[i].r0, blocks[i].r1, blocks[i].c0, blocks[i].c1);
        w[i] = double(blocks[i].r1 - blocks[i].r0) * (blocks[i].c1 - blocks[i].c0) / total;
    }
    double s_r = q[3] + w[0] * (q[0] - q[3]) + w[1] * (q[1] - q[3]) + w[2] * (q[2] - q[3]);

    double s = s_r + alpha * (s_o - s_r);
    return std::max(0.0, s);
}

// ---------------------------------------------------------------- F / E

namespace {

// Mid-rise 8-bit sweep: level k binarizes at (k+0.5)/levels, so exactly
// binary maps are reproduced at every level.
double sweep_threshold(int k, int levels) { return (k + 0.5) / double(levels); }

double f_beta(double precision, double recall, double beta2) {
    double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

// Exact squared Euclidean distance transform (two-pass lower envelope).
std::vector<int64_t> squared_edt(const GrayMap& on, int H, int W) {
    const int64_t kInf = int64_t(1) << 60;
    std::vector<int64_t> d(size_t(H) * W);
    // columns: distance to nearest on-pixel in the same column
    for (int c = 0; c < W; ++c) {
        int64_t last = -kInf;
        for (int r = 0; r < H; ++r) {
            if (on.at(r, c) != 0.0) last = r;
            d[size_t(r) * W + c] = (last == -kInf) ? kInf : int64_t(r - last) * (r - last);
        }
        last = kInf;
        for (int r = H - 1; r >= 0; --r) {
            if (on.at(r, c) != 0.0) last = r;
            int64_t v = (last == kInf) ? kInf : int64_t(last - r) * (last - r);
            d[size_t(r) * W + c] = std::min(d[size_t(r) * W + c], v);
        }
    }
    // rows: 1-D lower envelope over f(c) = column distances
    std::vector<int64_t> f(W), out(W);
    std::vector<int> v(W);
    std::vector<double> z(W + 1);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) f[c] = d[size_t(r) * W + c];
        int k = 0;
        v[0] = 0;
        z[0] = -1e120;
        z[1] = 1e120;
        for (int qi = 1; qi < W; ++qi) {
            if (f[qi] >= kInf) continue;
            if (f[v[0]] >= kInf) {
                v[0] = qi;
                continue;
            }
            double s;
            while (true) {
                int p = v[k];
                s = (double(f[qi] - f[p]) + double(qi) * qi - double(p) * p) / (2.0 * (qi - p));
                if (s <= z[k]) {
                    --k;
                } else {
                    break;
                }
            }
            ++k;
            v[k] = qi;
            z[k] = s;
            z[k + 1] = 1e120;
        }
        k = 0;
        for (int c = 0; c < W; ++c) {
            if (f[v[0]] >= kInf) {
                out[c] = kInf;
                continue;
            }
            while (z[k + 1] < c) ++k;
            int p = v[k];
            out[c] = f[p] + int64_t(c - p) * (c - p);
        }
        for (int c = 0; c < W; ++c) d[size_t(r) * W + c] = out[c];
    }
    return d;
}

}  // namespace

FMeasures f_measures(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg) {
    check_pair(pred, gt);
    cfg.validate();
    const int H = gt.height, W = gt.width;
    double npos = 0;
    for (double v : gt.values) npos += v;

    FMeasures out;
    double sum_f = 0;
    for (int k = 0; k < cfg.thresholds; ++k) {
        const double t = sweep_threshold(k, cfg.thresholds);
        int64_t tp = 0, fp = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (pred.values[i] >= t) {
                if (gt.values[i] != 0.0)
                    ++tp;
                else
                    ++fp;
            }
        }
        double f;
        if (npos == 0.0) {
            f = (tp + fp == 0) ? 1.0 : 0.0;
        } else if (tp + fp == 0 || tp == 0) {
            f = 0.0;
        } else {
            double precision = double(tp) / double(tp + fp);
            double recall = double(tp) / npos;
            f = f_beta(precision, recall, cfg.beta2);
        }
        out.max_f = std::max(out.max_f, f);
        sum_f += f;
    }
    out.mean_f = sum_f / double(cfg.thresholds);

    // ---- dependency-weighted F
    if (npos == 0.0) {
        double psum = 0;
        for (double v : pred.values) psum += v;
        out.weighted_f = (psum == 0.0) ? 1.0 : 0.0;
        return out;
    }
    std::vector<double> err(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) err[i] = std::abs(pred.values[i] - gt.values[i]);

    auto d2 = squared_edt(gt, H, W);
    // Et: at background pixels, error of the nearest foreground pixel;
    // among equally-near pixels the smallest error is used.
    std::vector<double> et = err;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            size_t i = size_t(r) * W + c;
            if (gt.values[i] != 0.0) continue;
            int64_t dd = d2[i];
            int dmax = int(std::sqrt(double(dd))) + 1;
            double best = 2.0;
            for (int dr = -dmax; dr <= dmax; ++dr) {
                int rr = r + dr;
                if (rr < 0 || rr >= H) continue;
                int64_t rem = dd - int64_t(dr) * dr;
                if (rem < 0) continue;
                int dc = int(std::llround(std::sqrt(double(rem))));
                while (int64_t(dc) * dc > rem) --dc;
                if (int64_t(dc) * dc != rem) continue;
                for (int sign : {-1, 1}) {
                    int cc = c + sign * dc;
                    if (cc < 0 || cc >= W) continue;
                    size_t j = size_t(rr) * W + cc;
                    if (gt.values[j] != 0.0) best = std::min(best, err[j]);
                    if (dc == 0) break;
                }
            }
            et[i] = best;
        }

    // 7x7 Gaussian (sigma 5), zero-padded correlation
    double kker[7][7], ksum = 0;
    for (int a = 0; a < 7; ++a)
        for (int b = 0; b < 7; ++b) {
            kker[a][b] = std::exp(-((a - 3.0) * (a - 3.0) + (b - 3.0) * (b - 3.0)) / 50.0);
            ksum += kker[a][b];
        }
    for (auto& row : kker)
        for (double& v : row) v /= ksum;
    std::vector<double> ea(pred.size(), 0.0);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0;
            for (int a = -3; a <= 3; ++a)
                for (int b = -3; b <= 3; ++b) {
                    int rr = r + a, cc = c + b;
                    if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                    s += kker[a + 3][b + 3] * et[size_t(rr) * W + cc];
                }
            ea[size_t(r) * W + c] = s;
        }

    const double decay = std::log(0.5) / 5.0;
    double sum_ew_fg = 0, sum_ew_bg = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            size_t i = size_t(r) * W + c;
            double min_e_ea = err[i];
            double b_weight;
            if (gt.values[i] != 0.0) {
                if (ea[i] < err[i]) min_e_ea = ea[i];
                b_weight = 1.0;
                sum_ew_fg += min_e_ea * b_weight;
            } else {
                b_weight = 2.0 - std::exp(decay * std::sqrt(double(d2[i])));
                sum_ew_bg += min_e_ea * b_weight;
            }
        }
    double recall_w = 1.0 - sum_ew_fg / npos;
    double tpw = npos - sum_ew_fg;
    double pw_denom = tpw + sum_ew_bg;
    double precision_w = pw_denom == 0.0 ? 0.0 : tpw / pw_denom;
    out.weighted_f = f_beta(precision_w, recall_w, cfg.beta2_weighted);
    return out;
}

EMeasures e_measures(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg) {
    check_pair(pred, gt);
    cfg.validate();
    const double total = double(gt.height) * gt.width;
    double npos = 0;
    for (double v : gt.values) npos += v;
    double mu_gt = npos / total;

    EMeasures out;
    out.max_e = 0.0;
    double sum_e = 0;
    for (int k = 0; k < cfg.thresholds; ++k) {
        const double t = sweep_threshold(k, cfg.thresholds);
        double score;
        if (npos == 0.0 || npos == total) {
            double agree = 0;
            for (size_t i = 0; i < pred.size(); ++i) {
                double b = pred.values[i] >= t ? 1.0 : 0.0;
                agree += (npos == 0.0) ? 1.0 - b : b;
            }
            score = agree / total;
        } else {
            double non = 0;
            for (double v : pred.values) non += (v >= t) ? 1.0 : 0.0;
            double mu_fm = non / total;
            double sum_phi = 0;
            for (size_t i = 0; i < pred.size(); ++i) {
                double dg = gt.values[i] - mu_gt;
                double df = (pred.values[i] >= t ? 1.0 : 0.0) - mu_fm;
                double denom = dg * dg + df * df;
                double align = denom == 0.0 ? 0.0 : 2.0 * dg * df / denom;
                sum_phi += (align + 1.0) * (align + 1.0) / 4.0;
            }
            score = sum_phi / total;
        }
        out.max_e = std::max(out.max_e, score);
        sum_e += score;
    }
    out.mean_e = sum_e / double(cfg.thresholds);
    return out;
}

double mae(const GrayMap& pred, const GrayMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("mae: size mismatch");
    double s = 0;
    for (size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
    return pred.size() ? s / double(pred.size()) : 0.0;
}

// -------------------------------------------------------------- relax HCE

namespace hce_detail {

// Erosion with a square element of side 2*gamma+1; outside the image counts
// as off.
std::vector<uint8_t> erode_square(const std::vector<uint8_t>& in, int H, int W, int gamma) {
    if (gamma == 0) return in;
    std::vector<uint8_t> tmp(in.size()), out(in.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            uint8_t v = 1;
            for (int dc = -gamma; dc <= gamma && v; ++dc) {
                int cc = c + dc;
                if (cc < 0 || cc >= W || !in[size_t(r) * W + cc]) v = 0;
            }
            tmp[size_t(r) * W + c] = v;
        }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            uint8_t v = 1;
            for (int dr = -gamma; dr <= gamma && v; ++dr) {
                int rr = r + dr;
                if (rr < 0 || rr >= H || !tmp[size_t(rr) * W + c]) v = 0;
            }
            out[size_t(r) * W + c] = v;
        }
    return out;
}

// 8-connected components in row-major discovery order.
std::vector<std::vector<std::pair<int, int>>> components(const std::vector<uint8_t>& mask, int H,
                                                         int W) {
    std::vector<int> label(mask.size(), -1);
    std::vector<std::vector<std::pair<int, int>>> comps;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            size_t i = size_t(r) * W + c;
            if (!mask[i] || label[i] >= 0) continue;
            int id = int(comps.size());
            comps.emplace_back();
            std::deque<std::pair<int, int>> queue{{r, c}};
            label[i] = id;
            while (!queue.empty()) {
                auto [pr, pc] = queue.front();
                queue.pop_front();
                comps[id].push_back({pr, pc});
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        int rr = pr + dr, cc = pc + dc;
                        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                        size_t j = size_t(rr) * W + cc;
                        if (mask[j] && label[j] < 0) {
                            label[j] = id;
                            queue.push_back({rr, cc});
                        }
                    }
            }
        }
    return comps;
}

// Moore-neighbor outer boundary trace, clockwise from the topmost-leftmost
// pixel; stops when the (pixel, backtrack) pair recurs.
std::vector<std::pair<int, int>> trace_boundary(const std::vector<std::pair<int, int>>& comp,
                                                int H, int W) {
    if (comp.size() == 1) return comp;
    std::vector<uint8_t> on(size_t(H) * W, 0);
    for (auto [r, c] : comp) on[size_t(r) * W + c] = 1;
    auto start = *std::min_element(comp.begin(), comp.end());
    // clockwise Moore neighborhood starting west
    static const int dr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
    static const int dc[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    auto is_on = [&](int r, int c) {
        return r >= 0 && r < H && c >= 0 && c < W && on[size_t(r) * W + c] != 0;
    };
    std::vector<std::pair<int, int>> boundary;
    const int cur0_r = start.first, cur0_c = start.second;
    const int back0 = 0;  // entered from the west (off: start is leftmost in its top row)
    int cur_r = cur0_r, cur_c = cur0_c, backtrack = back0;
    const size_t guard = comp.size() * 16 + 64;
    do {
        boundary.push_back({cur_r, cur_c});
        int found = -1;
        for (int k = 0; k < 8; ++k) {
            int dir = (backtrack + k) % 8;
            if (is_on(cur_r + dr[dir], cur_c + dc[dir])) {
                found = dir;
                break;
            }
        }
        if (found < 0) break;  // cannot happen for multi-pixel components
        cur_r += dr[found];
        cur_c += dc[found];
        backtrack = (found + 5) % 8;  // neighbor just past the pixel we came from
    } while (!(cur_r == cur0_r && cur_c == cur0_c && backtrack == back0) &&
             boundary.size() < guard);
    return boundary;
}

double seg_distance(std::pair<int, int> p, std::pair<int, int> a, std::pair<int, int> b) {
    double ax = a.second, ay = a.first, bx = b.second, by = b.first;
    double px = p.second, py = p.first;
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    if (len2 == 0.0) return std::hypot(px - ax, py - ay);
    double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
    return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

// Douglas-Peucker on an open chain, returns the kept-vertex count (endpoints
// included).
size_t dp_count(const std::vector<std::pair<int, int>>& pts, size_t lo, size_t hi, double eps) {
    if (hi <= lo + 1) return 2;
    double dmax = -1;
    size_t split = lo;
    for (size_t i = lo + 1; i < hi; ++i) {
        double d = seg_distance(pts[i], pts[lo], pts[hi]);
        if (d > dmax) {
            dmax = d;
            split = i;
        }
    }
    if (dmax <= eps) return 2;
    return dp_count(pts, lo, split, eps) + dp_count(pts, split, hi, eps) - 1;
}

size_t dominant_vertices(const std::vector<std::pair<int, int>>& boundary, double eps) {
    if (boundary.size() <= 2) return boundary.size();
    // closed polygon: anchor at index 0 and the farthest point from it
    size_t far = 1;
    double dmax = -1;
    for (size_t i = 1; i < boundary.size(); ++i) {
        double d = std::hypot(double(boundary[i].first - boundary[0].first),
                              double(boundary[i].second - boundary[0].second));
        if (d > dmax) {
            dmax = d;
            far = i;
        }
    }
    auto closed = boundary;
    closed.push_back(boundary[0]);
    size_t n1 = dp_count(closed, 0, far, eps);
    size_t n2 = dp_count(closed, far, closed.size() - 1, eps);
    return n1 + n2 - 2;  // shared anchors counted once, wrap duplicate dropped
}

int64_t region_clicks(const std::vector<uint8_t>& mask, int H, int W, int gamma, double eps) {
    auto eroded = erode_square(mask, H, W, gamma);
    int64_t clicks = 0;
    for (const auto& comp : components(eroded, H, W)) {
        auto boundary = trace_boundary(comp, H, W);
        clicks += 1 + int64_t(dominant_vertices(boundary, eps));
    }
    return clicks;
}

}  // namespace hce_detail

int64_t relax_hce(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg) {
    check_pair(pred, gt);
    cfg.validate();
    const int H = gt.height, W = gt.width;
    std::vector<uint8_t> fp(size_t(H) * W), fn(size_t(H) * W);
    for (size_t i = 0; i < gt.values.size(); ++i) {
        bool p = pred.values[i] >= 0.5;
        bool g = gt.values[i] != 0.0;
        fp[i] = (p && !g) ? 1 : 0;
        fn[i] = (!p && g) ? 1 : 0;
    }
    return hce_detail::region_clicks(fp, H, W, cfg.hce_gamma, cfg.hce_epsilon) +
           hce_detail::region_clicks(fn, H, W, cfg.hce_gamma, cfg.hce_epsilon);
}

// ------------------------------------------------------------- aggregation

ImageMetrics compute_all(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg,
                         const std::string& id) {
    ImageMetrics m;
    m.id = id;
    m.sm = s_measure(pred, gt, cfg.alpha);
    auto f = f_measures(pred, gt, cfg);
    m.fmax = f.max_f;
    m.fmean = f.mean_f;
    m.fw = f.weighted_f;
    auto e = e_measures(pred, gt, cfg);
    m.emax = e.max_e;
    m.emean = e.mean_e;
    m.mae = mae(pred, gt);
    m.hce = relax_hce(pred, gt, cfg);
    return m;
}

namespace {

GrayMap mat_to_gray(const cv::Mat& m, bool binarize) {
    GrayMap g(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            double v = m.at<uchar>(r, c) / 255.0;
            g.at(r, c) = binarize ? (m.at<uchar>(r, c) >= 128 ? 1.0 : 0.0) : v;
        }
    return g;
}

}  // namespace

MetricReport evaluate_corpus(const fs::path& pred_dir, const fs::path& gt_dir,
                             const MetricConfig& cfg) {
    cfg.validate();
    MetricReport report;
    report.config = cfg;
    std::map<std::string, fs::path> preds, gts;
    auto collect = [](const fs::path& dir, std::map<std::string, fs::path>& out) {
        if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) out[e.path().stem().string()] = e.path();
    };
    collect(pred_dir, preds);
    collect(gt_dir, gts);
    for (const auto& [stem, p] : preds)
        if (!gts.count(stem)) report.unpaired.push_back(stem + " (no GT)");
    for (const auto& [stem, p] : gts)
        if (!preds.count(stem)) report.unpaired.push_back(stem + " (no prediction)");

    double s_sm = 0, s_fx = 0, s_fm = 0, s_fw = 0, s_ex = 0, s_em = 0, s_mae = 0;
    for (const auto& [stem, gt_path] : gts) {
        auto it = preds.find(stem);
        if (it == preds.end()) continue;
        cv::Mat pm = cv::imread(it->second.string(), cv::IMREAD_GRAYSCALE);
        cv::Mat gm = cv::imread(gt_path.string(), cv::IMREAD_GRAYSCALE);
        if (pm.empty() || gm.empty()) {
            report.unpaired.push_back(stem + " (unreadable)");
            continue;
        }
        if (pm.size() != gm.size())
            cv::resize(pm, pm, gm.size(), 0, 0, cv::INTER_LINEAR);
        auto m = compute_all(mat_to_gray(pm, false), mat_to_gray(gm, true), cfg, stem);
        report.per_image.push_back(m);
        s_sm += m.sm;
        s_fx += m.fmax;
        s_fm += m.fmean;
        s_fw += m.fw;
        s_ex += m.emax;
        s_em += m.emean;
        s_mae += m.mae;
        report.hce_sum += m.hce;
        report.evaluated++;
    }
    if (report.evaluated > 0) {
        double n = report.evaluated;
        report.summary.id = "mean";
        report.summary.sm = s_sm / n;
        report.summary.fmax = s_fx / n;
        report.summary.fmean = s_fm / n;
        report.summary.fw = s_fw / n;
        report.summary.emax = s_ex / n;
        report.summary.emean = s_em / n;
        report.summary.mae = s_mae / n;
        report.summary.hce = int64_t(std::llround(double(report.hce_sum) / n));
    }
    return report;
}

namespace {

json metrics_to_json(const ImageMetrics& m) {
    return json{{"id", m.id},     {"sm", m.sm},     {"fmax", m.fmax}, {"fmean", m.fmean},
                {"fw", m.fw},     {"emax", m.emax}, {"emean", m.emean},
                {"mae", m.mae},   {"hce_approx", m.hce}};
}

}  // namespace

void write_report_json(const MetricReport& report, const fs::path& path) {
    json j;
    j["config"] = {{"alpha", report.config.alpha},
                   {"beta2", report.config.beta2},
                   {"beta2_weighted", report.config.beta2_weighted},
                   {"thresholds", report.config.thresholds},
                   {"hce_gamma", report.config.hce_gamma},
                   {"hce_epsilon", report.config.hce_epsilon}};
    j["per_image"] = json::array();
    for (const auto& m : report.per_image) j["per_image"].push_back(metrics_to_json(m));
    j["summary"] = metrics_to_json(report.summary);
    j["summary"]["hce_approx_sum"] = report.hce_sum;
    j["evaluated"] = report.evaluated;
    j["unpaired"] = report.unpaired;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

void write_report_csv(const MetricReport& report, const fs::path& path) {
    std::ofstream out(path);
    out << "id,fmax,fw,mae,sm,emean,hce_approx,fmean,emax\n";
    auto row = [&](const ImageMetrics& m) {
        out << m.id << "," << m.fmax << "," << m.fw << "," << m.mae << "," << m.sm << ","
            << m.emean << "," << m.hce << "," << m.fmean << "," << m.emax << "\n";
    };
    for (const auto& m : report.per_image) row(m);
    if (report.evaluated > 0) row(report.summary);
}

}  // namespace biref
