#include "unicalli/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "unicalli/error.hpp"

namespace unicalli {

namespace {

void require_same_dims(const GrayImage& a, const GrayImage& b, const char* op) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw Error(std::string(op) + ": image dimensions differ");
    }
}

constexpr int kWindow = 8;
constexpr int kStride = 4;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

} // namespace

double l1(const GrayImage& a, const GrayImage& b) {
    require_same_dims(a, b, "l1");
    if (a.empty()) throw Error("l1: empty images");
    double sum = 0.0;
    auto pa = a.pixels();
    auto pb = b.pixels();
    for (std::size_t i = 0; i < pa.size(); ++i) sum += std::abs(static_cast<double>(pa[i]) - pb[i]);
    return sum / static_cast<double>(pa.size());
}

double ssim(const GrayImage& a, const GrayImage& b) {
    require_same_dims(a, b, "ssim");
    if (a.height() < kWindow || a.width() < kWindow) throw Error("ssim: images smaller than the 8x8 window");
    double total = 0.0;
    int windows = 0;
    for (int y0 = 0; y0 + kWindow <= a.height(); y0 += kStride) {
        for (int x0 = 0; x0 + kWindow <= a.width(); x0 += kStride) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int y = y0; y < y0 + kWindow; ++y) {
                for (int x = x0; x < x0 + kWindow; ++x) {
                    double u = 0.5 * (a.at(y, x) + 1.0);
                    double v = 0.5 * (b.at(y, x) + 1.0);
                    sa += u;
                    sb += v;
                    saa += u * u;
                    sbb += v * v;
                    sab += u * v;
                }
            }
            const double n = kWindow * kWindow;
            double ma = sa / n, mb = sb / n;
            double va = saa / n - ma * ma;
            double vb = sbb / n - mb * mb;
            double cov = sab / n - ma * mb;
            total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            ++windows;
        }
    }
    return total / windows;
}

double box_iou(const CharBox& a, const CharBox& b) {
    long ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    long iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    long inter = ix * iy;
    long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double mean_box_iou(std::span<const CharBox> pred, std::span<const CharBox> truth) {
    if (pred.empty() && truth.empty()) return 1.0;
    struct Pair {
        double iou;
        std::size_t p, t;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < truth.size(); ++j) {
            double v = box_iou(pred[i], truth[j]);
            if (v > 0.0) pairs.push_back({v, i, j});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.iou > y.iou; });
    std::vector<bool> used_p(pred.size()), used_t(truth.size());
    double sum = 0.0;
    for (const auto& pr : pairs) {
        if (used_p[pr.p] || used_t[pr.t]) continue;
        used_p[pr.p] = used_t[pr.t] = true;
        sum += pr.iou;
    }
    return sum / static_cast<double>(std::max(pred.size(), truth.size()));
}

CharAccuracy char_accuracy(std::span<const GlyphId> pred, std::span<const GlyphId> truth) {
    if (pred.size() != truth.size()) throw Error("char_accuracy: sequence lengths differ");
    if (truth.empty()) return {1.0, 1.0};
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
    return {static_cast<double>(hits) / static_cast<double>(truth.size()), hits == truth.size() ? 1.0 : 0.0};
}

SampleEval EvalReport::aggregate() const {
    SampleEval out;
    out.name = "mean";
    auto mean_of = [&](auto get) -> std::optional<double> {
        double sum = 0.0;
        int n = 0;
        for (const auto& s : samples) {
            if (auto v = get(s)) {
                sum += *v;
                ++n;
            }
        }
        return n ? std::optional<double>(sum / n) : std::nullopt;
    };
    out.l1 = mean_of([](const SampleEval& s) { return s.l1; });
    out.ssim = mean_of([](const SampleEval& s) { return s.ssim; });
    out.box_iou = mean_of([](const SampleEval& s) { return s.box_iou; });
    auto c = mean_of([](const SampleEval& s) {
        return s.accuracy ? std::optional<double>(s.accuracy->char_rate) : std::nullopt;
    });
    auto q = mean_of([](const SampleEval& s) {
        return s.accuracy ? std::optional<double>(s.accuracy->sequence_rate) : std::nullopt;
    });
    if (c) out.accuracy = CharAccuracy{*c, *q};
    return out;
}

std::string EvalReport::to_csv() const {
    std::ostringstream o;
    o << "sample,l1,ssim,box_iou,char_acc,seq_acc,fid,lpips\n";
    auto cell = [&](std::optional<double> v) {
        if (v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", *v);
            o << buf;
        }
    };
    auto row = [&](const SampleEval& s) {
        o << s.name << ',';
        cell(s.l1);
        o << ',';
        cell(s.ssim);
        o << ',';
        cell(s.box_iou);
        o << ',';
        cell(s.accuracy ? std::optional<double>(s.accuracy->char_rate) : std::nullopt);
        o << ',';
        cell(s.accuracy ? std::optional<double>(s.accuracy->sequence_rate) : std::nullopt);
        o << ",,\n";
    };
    for (const auto& s : samples) row(s);
    row(aggregate());
    return o.str();
}

} // namespace unicalli
