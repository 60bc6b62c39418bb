#include "biref/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace biref {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
    if (count <= 0) throw std::invalid_argument("synthetic count must be positive");
    if (height < 32 || width < 32) throw std::invalid_argument("synthetic canvas too small");
    double sum = std::accumulate(mix.begin(), mix.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("structure mix must sum to 1");
    for (double m : mix)
        if (m < 0.0) throw std::invalid_argument("structure mix entries must be nonnegative");
    if (min_stroke < 1 || max_stroke < min_stroke)
        throw std::invalid_argument("stroke widths must satisfy 1 <= min <= max");
}

namespace {

torch::Tensor mat_to_image_tensor(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kFloat32);
    return t.permute({2, 0, 1}).contiguous();
}

torch::Tensor mask_to_gt_tensor(const cv::Mat& mask8) {
    cv::Mat f;
    mask8.convertTo(f, CV_32FC1, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {1, f.rows, f.cols}, torch::kFloat32).clone();
    return (t >= 0.5).to(torch::kFloat32);
}

cv::Point rand_point(std::mt19937_64& rng, int h, int w, int margin) {
    std::uniform_int_distribution<int> dx(margin, w - 1 - margin), dy(margin, h - 1 - margin);
    return {dx(rng), dy(rng)};
}

cv::Scalar rand_color(std::mt19937_64& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return {double(d(rng)), double(d(rng)), double(d(rng))};
}

void draw_thin_curve(cv::Mat& mask, std::mt19937_64& rng, int min_s, int max_s) {
    const int h = mask.rows, w = mask.cols;
    std::uniform_int_distribution<int> n_curves(2, 4);
    std::uniform_int_distribution<int> stroke(min_s, max_s);
    std::uniform_real_distribution<double> amp(0.05, 0.25), phase(0, 2 * M_PI), freq(1.0, 3.0);
    int curves = n_curves(rng);
    for (int c = 0; c < curves; ++c) {
        // sinusoidal ribbon across the canvas, random orientation
        bool horizontal = (rng() & 1u) != 0;
        double a = amp(rng) * (horizontal ? h : w), p = phase(rng), f = freq(rng);
        std::uniform_int_distribution<int> base_d(int(0.15 * (horizontal ? h : w)),
                                                  int(0.85 * (horizontal ? h : w)));
        int base = base_d(rng);
        std::vector<cv::Point> pts;
        int span = horizontal ? w : h;
        for (int t = 0; t < span; t += 2) {
            int off = base + int(a * std::sin(f * 2 * M_PI * t / span + p));
            off = std::clamp(off, 1, (horizontal ? h : w) - 2);
            pts.push_back(horizontal ? cv::Point(t, off) : cv::Point(off, t));
        }
        cv::polylines(mask, pts, false, 255, stroke(rng), cv::LINE_8);
    }
}

void draw_grid(cv::Mat& mask, std::mt19937_64& rng, int min_s, int max_s) {
    const int h = mask.rows, w = mask.cols;
    std::uniform_int_distribution<int> stroke(min_s, max_s);
    std::uniform_int_distribution<int> spacing(std::max(8, h / 16), std::max(12, h / 6));
    std::uniform_int_distribution<int> x0d(0, w / 4), y0d(0, h / 4);
    int sx = spacing(rng), sy = spacing(rng);
    int x0 = x0d(rng), y0 = y0d(rng);
    int x1 = std::min(w - 1, x0 + w / 2 + x0d(rng)), y1 = std::min(h - 1, y0 + h / 2 + y0d(rng));
    int s = stroke(rng);
    for (int x = x0; x <= x1; x += sx)
        cv::line(mask, {x, y0}, {x, y1}, 255, s, cv::LINE_8);
    for (int y = y0; y <= y1; y += sy)
        cv::line(mask, {x0, y}, {x1, y}, 255, s, cv::LINE_8);
}

void draw_star(cv::Mat& mask, std::mt19937_64& rng, int min_s, int max_s) {
    const int h = mask.rows, w = mask.cols;
    std::uniform_int_distribution<int> stroke(min_s, max_s);
    std::uniform_int_distribution<int> n_spokes(6, 14);
    cv::Point center = rand_point(rng, h, w, std::min(h, w) / 4);
    std::uniform_real_distribution<double> rad(0.18 * std::min(h, w), 0.42 * std::min(h, w));
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    int spokes = n_spokes(rng);
    int s = stroke(rng);
    for (int k = 0; k < spokes; ++k) {
        double ang = 2 * M_PI * k / spokes + jitter(rng);
        double r = rad(rng);
        cv::Point tip(center.x + int(r * std::cos(ang)), center.y + int(r * std::sin(ang)));
        tip.x = std::clamp(tip.x, 0, w - 1);
        tip.y = std::clamp(tip.y, 0, h - 1);
        cv::line(mask, center, tip, 255, s, cv::LINE_8);
    }
    cv::circle(mask, center, std::max(2, s + 1), 255, cv::FILLED);
}

void draw_blob_with_holes(cv::Mat& mask, std::mt19937_64& rng, int, int) {
    const int h = mask.rows, w = mask.cols;
    cv::Point center = rand_point(rng, h, w, std::min(h, w) / 4);
    std::uniform_int_distribution<int> axis(int(0.18 * std::min(h, w)), int(0.38 * std::min(h, w)));
    std::uniform_int_distribution<int> angle(0, 179);
    cv::Size axes(axis(rng), axis(rng));
    cv::ellipse(mask, center, axes, angle(rng), 0, 360, 255, cv::FILLED);
    std::uniform_int_distribution<int> n_holes(1, 3);
    int holes = n_holes(rng);
    for (int k = 0; k < holes; ++k) {
        std::uniform_int_distribution<int> off(-axes.width / 2, axes.width / 2);
        cv::Point hc(center.x + off(rng), center.y + off(rng));
        int hr = std::max(2, std::min(axes.width, axes.height) / (3 + k));
        cv::circle(mask, hc, hr, 0, cv::FILLED);
    }
}

cv::Mat render_image(const cv::Mat& mask, std::mt19937_64& rng) {
    const int h = mask.rows, w = mask.cols;
    cv::Mat img(h, w, CV_8UC3);
    // smooth background gradient between two dark-ish colors
    cv::Scalar c0 = rand_color(rng, 30, 110), c1 = rand_color(rng, 30, 110);
    bool vertical = (rng() & 1u) != 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double t = vertical ? double(r) / (h - 1) : double(c) / (w - 1);
            for (int ch = 0; ch < 3; ++ch)
                img.at<cv::Vec3b>(r, c)[ch] = uchar((1 - t) * c0[ch] + t * c1[ch]);
        }
    }
    // faint background distractors: gradients without GT support
    std::uniform_int_distribution<int> n_distract(2, 5);
    int nd = n_distract(rng);
    for (int k = 0; k < nd; ++k) {
        cv::Point p = rand_point(rng, h, w, 4);
        std::uniform_int_distribution<int> rad(3, std::max(4, std::min(h, w) / 10));
        cv::Scalar col = rand_color(rng, 20, 130);
        if ((rng() & 1u) != 0)
            cv::circle(img, p, rad(rng), col, cv::FILLED);
        else
            cv::line(img, p, rand_point(rng, h, w, 4), col, 1 + int(rng() % 2));
    }
    // bright foreground where the mask is on
    cv::Scalar fg = rand_color(rng, 180, 255);
    img.setTo(fg, mask);
    // mild pixel noise
    std::normal_distribution<double> noise(0.0, 4.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                int v = img.at<cv::Vec3b>(r, c)[ch] + int(std::lround(noise(rng)));
                img.at<cv::Vec3b>(r, c)[ch] = uchar(std::clamp(v, 0, 255));
            }
    return img;
}

std::vector<StructureFamily> family_plan(const SyntheticSpec& spec) {
    // largest-remainder allocation, then a deterministic round-robin order
    std::array<int, kNumStructureFamilies> counts{};
    std::array<double, kNumStructureFamilies> frac{};
    int assigned = 0;
    for (int f = 0; f < kNumStructureFamilies; ++f) {
        double exact = spec.mix[f] * spec.count;
        counts[f] = int(std::floor(exact));
        frac[f] = exact - counts[f];
        assigned += counts[f];
    }
    while (assigned < spec.count) {
        int best = int(std::max_element(frac.begin(), frac.end()) - frac.begin());
        counts[best]++;
        frac[best] = -1;
        assigned++;
    }
    std::vector<StructureFamily> plan;
    std::array<int, kNumStructureFamilies> left = counts;
    while (int(plan.size()) < spec.count)
        for (int f = 0; f < kNumStructureFamilies; ++f)
            if (left[f] > 0 && int(plan.size()) < spec.count) {
                plan.push_back(StructureFamily(f));
                left[f]--;
            }
    return plan;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

bool has_image_ext(const fs::path& p) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), ::tolower);
    return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp";
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.height = spec.height;
    corpus.width = spec.width;
    corpus.categories = {"thin-curve", "grid", "star", "blob-with-holes"};
    auto plan = family_plan(spec);
    for (int i = 0; i < spec.count; ++i) {
        std::mt19937_64 rng(splitmix64(spec.seed * 0x100000001ull + uint64_t(i)));
        cv::Mat mask = cv::Mat::zeros(spec.height, spec.width, CV_8UC1);
        switch (plan[i]) {
            case StructureFamily::ThinCurve:
                draw_thin_curve(mask, rng, spec.min_stroke, spec.max_stroke);
                break;
            case StructureFamily::Grid:
                draw_grid(mask, rng, spec.min_stroke, spec.max_stroke);
                break;
            case StructureFamily::Star:
                draw_star(mask, rng, spec.min_stroke, spec.max_stroke);
                break;
            case StructureFamily::BlobWithHoles:
                draw_blob_with_holes(mask, rng, spec.min_stroke, spec.max_stroke);
                break;
        }
        if (cv::countNonZero(mask) == 0)  // cannot happen with the drawers above
            cv::circle(mask, {spec.width / 2, spec.height / 2}, 4, 255, cv::FILLED);
        cv::Mat img = render_image(mask, rng);
        ImageSample s;
        s.image = mat_to_image_tensor(img);
        s.gt = mask_to_gt_tensor(mask);
        s.category = int64_t(plan[i]);
        // stems start with the class name so the manifest can restore categories
        std::ostringstream id;
        id << corpus.categories[size_t(plan[i])] << "_" << std::setw(5) << std::setfill('0') << i;
        s.id = id.str();
        corpus.samples.push_back(std::move(s));
    }
    // keep samples in filename order so a saved corpus reloads in the same order
    std::sort(corpus.samples.begin(), corpus.samples.end(),
              [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
    return corpus;
}

Corpus load_corpus(const fs::path& root, const std::string& split) {
    fs::path im_dir = root / split / "im";
    fs::path gt_dir = root / split / "gt";
    if (!fs::is_directory(im_dir) || !fs::is_directory(gt_dir))
        throw std::runtime_error("corpus layout missing: " + (root / split).string() + "/{im,gt}");

    std::map<std::string, fs::path> gt_by_stem;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.is_regular_file() && has_image_ext(e.path()))
            gt_by_stem[e.path().stem().string()] = e.path();

    // optional name->class manifest
    std::vector<std::string> categories;
    std::map<std::string, int64_t> class_of;
    fs::path manifest = root / "class_manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        std::string line;
        std::map<int64_t, std::string> names;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error("manifest line missing tab: " + line);
            std::string name = line.substr(0, tab);
            int64_t id = std::stoll(line.substr(tab + 1));
            class_of[name] = id;
            names[id] = name;
        }
        for (auto& [id, name] : names) categories.push_back(name);
    } else {
        categories = {"all"};
    }

    Corpus corpus;
    corpus.categories = categories;
    std::vector<fs::path> im_files;
    for (const auto& e : fs::directory_iterator(im_dir)) {
        if (!e.is_regular_file()) continue;
        if (!has_image_ext(e.path())) {
            std::cerr << "warning: skipping non-image file " << e.path() << "\n";
            continue;
        }
        im_files.push_back(e.path());
    }
    std::sort(im_files.begin(), im_files.end());

    for (const auto& im_path : im_files) {
        std::string stem = im_path.stem().string();
        auto it = gt_by_stem.find(stem);
        if (it == gt_by_stem.end())
            throw std::runtime_error("no GT map for image stem '" + stem + "'");
        cv::Mat img = cv::imread(im_path.string(), cv::IMREAD_COLOR);
        cv::Mat gt = cv::imread(it->second.string(), cv::IMREAD_GRAYSCALE);
        if (img.empty() || gt.empty())
            throw std::runtime_error("unreadable image pair for stem '" + stem + "'");
        if (img.rows != gt.rows || img.cols != gt.cols)
            throw std::runtime_error("image/GT size mismatch for stem '" + stem + "'");
        cv::Mat bin;
        cv::threshold(gt, bin, 127.0, 255.0, cv::THRESH_BINARY);  // >=128 -> on

        ImageSample s;
        s.image = mat_to_image_tensor(img);
        s.gt = mask_to_gt_tensor(bin);
        s.id = stem;
        s.source = im_path;
        s.category = 0;
        // longest manifest name that prefixes the stem wins
        size_t best_len = 0;
        for (const auto& [name, id] : class_of)
            if (stem.rfind(name, 0) == 0 && name.size() > best_len) {
                s.category = id;
                best_len = name.size();
            }
        if (corpus.height == 0) {
            corpus.height = img.rows;
            corpus.width = img.cols;
        }
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const fs::path& root, const std::string& split) {
    fs::create_directories(root / split / "im");
    fs::create_directories(root / split / "gt");
    if (corpus.num_categories() > 1) {
        std::ofstream out(root / "class_manifest.txt");
        for (size_t i = 0; i < corpus.categories.size(); ++i)
            out << corpus.categories[i] << '\t' << i << '\n';
    }
    for (const auto& s : corpus.samples) {
        auto img = (s.image.permute({1, 2, 0}).contiguous() * 255.0)
                       .clamp(0, 255)
                       .to(torch::kUInt8);
        cv::Mat rgb(int(img.size(0)), int(img.size(1)), CV_8UC3, img.data_ptr<uint8_t>());
        cv::Mat bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        cv::imwrite((root / split / "im" / (s.id + ".png")).string(), bgr);
        auto gt = (s.gt.squeeze(0) * 255.0).to(torch::kUInt8).contiguous();
        cv::Mat g(int(gt.size(0)), int(gt.size(1)), CV_8UC1, gt.data_ptr<uint8_t>());
        cv::imwrite((root / split / "gt" / (s.id + ".png")).string(), g);
    }
}

Batch make_batch(const Corpus& corpus, const std::vector<int64_t>& indices,
                 int height, int width, bool flip, std::mt19937_64& rng) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    std::vector<torch::Tensor> imgs, gts;
    std::vector<int64_t> labels;
    Batch batch;
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= corpus.size())
            throw std::out_of_range("make_batch: index out of range");
        const auto& s = corpus.samples[size_t(idx)];
        auto img = s.image.unsqueeze(0);
        auto gt = s.gt.unsqueeze(0);
        if (img.size(2) != height || img.size(3) != width) {
            img = torch::nn::functional::interpolate(
                img, torch::nn::functional::InterpolateFuncOptions()
                         .size(std::vector<int64_t>{height, width})
                         .mode(torch::kBilinear)
                         .align_corners(false));
            gt = torch::nn::functional::interpolate(
                gt, torch::nn::functional::InterpolateFuncOptions()
                        .size(std::vector<int64_t>{height, width})
                        .mode(torch::kNearest));
            gt = (gt >= 0.5).to(torch::kFloat32);
        }
        if (flip && (rng() & 1u) != 0) {
            img = img.flip(-1);
            gt = gt.flip(-1);
        }
        imgs.push_back(img);
        gts.push_back(gt);
        labels.push_back(s.category);
        batch.ids.push_back(s.id);
    }
    batch.images = torch::cat(imgs, 0);
    batch.gts = torch::cat(gts, 0);
    batch.labels = torch::tensor(labels, torch::kInt64);
    return batch;
}

}  // namespace biref
