#include "sfseg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sfseg {
namespace {

void check_binary(const torch::Tensor& t, const char* what) {
    auto ok = ((t == 0) | (t == 1)).all().item<bool>();
    if (!ok) throw ShapeError(std::string(what) + " must be a {0,1} mask");
}

// Sliding-window probabilities for one (C,D,H,W) volume, averaging overlaps.
torch::Tensor sliding_window_probs(Model& model, const torch::Tensor& volume,
                                   const std::vector<std::int64_t>& window) {
    const auto classes = model.arch.out_classes;
    std::vector<std::int64_t> vol_shape(volume.sizes().begin() + 1, volume.sizes().end());
    std::vector<std::int64_t> win(3);
    for (int i = 0; i < 3; ++i)
        win[i] = window.empty() ? vol_shape[i]
                                : std::min<std::int64_t>(window[i], vol_shape[i]);

    auto probs = torch::zeros({classes, vol_shape[0], vol_shape[1], vol_shape[2]});
    auto counts = torch::zeros({1, vol_shape[0], vol_shape[1], vol_shape[2]});

    auto starts = [](std::int64_t extent, std::int64_t w) {
        std::vector<std::int64_t> out;
        const std::int64_t stride = std::max<std::int64_t>(1, w / 2);
        for (std::int64_t s = 0;; s += stride) {
            if (s + w >= extent) {
                out.push_back(extent - w);
                break;
            }
            out.push_back(s);
        }
        return out;
    };

    torch::NoGradGuard guard;
    model.eval();
    for (auto z : starts(vol_shape[0], win[0]))
        for (auto y : starts(vol_shape[1], win[1]))
            for (auto x : starts(vol_shape[2], win[2])) {
                auto patch = volume.slice(1, z, z + win[0])
                                 .slice(2, y, y + win[1])
                                 .slice(3, x, x + win[2]);
                auto out = forward(model, patch.unsqueeze(0)).probs.squeeze(0);
                probs.slice(1, z, z + win[0])
                    .slice(2, y, y + win[1])
                    .slice(3, x, x + win[2]) += out;
                counts.slice(1, z, z + win[0])
                    .slice(2, y, y + win[1])
                    .slice(3, x, x + win[2]) += 1.0;
            }
    return probs / counts;
}

}  // namespace

double dice(const torch::Tensor& pred, const torch::Tensor& gt) {
    if (pred.sizes() != gt.sizes()) throw ShapeError("dice mask shapes must match");
    check_binary(pred, "dice pred");
    check_binary(gt, "dice gt");
    auto p = pred.to(torch::kFloat64);
    auto g = gt.to(torch::kFloat64);
    const double inter = (p * g).sum().item<double>();
    const double total = p.sum().item<double>() + g.sum().item<double>();
    if (total == 0.0) return 1.0;
    return 2.0 * inter / total;
}

TumorRegions brats_regions(const torch::Tensor& label) {
    auto lab = label.to(torch::kInt64);
    if (((lab < 0) | (lab > 3)).any().item<bool>())
        throw ShapeError("brats_regions expects class indices in {0,1,2,3}");
    TumorRegions r;
    r.whole = (lab >= 1).to(torch::kInt64);
    r.core = ((lab == 1) | (lab == 3)).to(torch::kInt64);
    r.enhancing = (lab == 3).to(torch::kInt64);
    return r;
}

EvalReport evaluate(Model& model, const Dataset& dataset, const EvalOptions& opts) {
    if (dataset.empty()) throw DataError("cannot evaluate an empty dataset");
    if (!dataset.fully_labeled())
        throw DataError("evaluate requires a fully labeled dataset");

    const int classes = model.arch.out_classes;
    EvalReport report;
    torch::NoGradGuard guard;
    model.eval();

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& img = dataset.image(i);
        torch::Tensor probs;
        if (model.arch.dims == 3 && !opts.window.empty()) {
            probs = sliding_window_probs(model, img, opts.window);
        } else {
            probs = forward(model, img.unsqueeze(0)).probs.squeeze(0);
        }
        EvalReport::Entry entry;
        entry.id = dataset.sample_id(i);
        const auto& gt = dataset.label(i);
        if (classes == 1) {
            auto pred = (probs.squeeze(0) >= 0.5).to(torch::kInt64);
            entry.dice["fg"] = dice(pred, gt);
        } else {
            auto pred = probs.argmax(0);
            if (opts.brats_regions) {
                auto pr = brats_regions(pred);
                auto gr = brats_regions(gt);
                entry.dice["WT"] = dice(pr.whole, gr.whole);
                entry.dice["TC"] = dice(pr.core, gr.core);
                entry.dice["ET"] = dice(pr.enhancing, gr.enhancing);
            } else {
                for (int c = 1; c < classes; ++c)
                    entry.dice["class" + std::to_string(c)] =
                        dice((pred == c).to(torch::kInt64), (gt == c).to(torch::kInt64));
            }
        }
        report.per_sample.push_back(std::move(entry));
    }

    for (const auto& [region, _] : report.per_sample.front().dice) {
        double sum = 0.0;
        for (const auto& e : report.per_sample) sum += e.dice.at(region);
        const double mean = sum / static_cast<double>(report.per_sample.size());
        double var = 0.0;
        for (const auto& e : report.per_sample) {
            const double d = e.dice.at(region) - mean;
            var += d * d;
        }
        report.mean[region] = mean;
        report.stddev[region] =
            std::sqrt(var / static_cast<double>(report.per_sample.size()));
    }
    report.meta["dataset_id"] = dataset.id();
    report.meta["n_samples"] = report.per_sample.size();
    return report;
}

double headline_dice(const EvalReport& report) {
    double sum = 0.0;
    for (const auto& [_, v] : report.mean) sum += v;
    return report.mean.empty() ? 0.0 : sum / static_cast<double>(report.mean.size());
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["meta"] = meta;
    j["mean"] = mean;
    j["stddev"] = stddev;
    auto& ps = j["per_sample"] = nlohmann::json::array();
    for (const auto& e : per_sample) ps.push_back({{"id", e.id}, {"dice", e.dice}});
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.meta = j.at("meta");
    r.mean = j.at("mean").get<std::map<std::string, double>>();
    r.stddev = j.at("stddev").get<std::map<std::string, double>>();
    for (const auto& e : j.at("per_sample")) {
        EvalReport::Entry entry;
        entry.id = e.at("id").get<std::string>();
        entry.dice = e.at("dice").get<std::map<std::string, double>>();
        r.per_sample.push_back(std::move(entry));
    }
    return r;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "id,region,dice\n";
    for (const auto& e : per_sample)
        for (const auto& [region, value] : e.dice)
            os << e.id << ',' << region << ',' << value << '\n';
    return os.str();
}

void EvalReport::save(const std::filesystem::path& json_path) const {
    std::ofstream os(json_path);
    if (!os) throw DataError("cannot write report: " + json_path.string());
    os << to_json().dump(2) << '\n';
    auto csv_path = json_path;
    csv_path.replace_extension(".csv");
    std::ofstream cs(csv_path);
    cs << to_csv();
}

EvalReport EvalReport::load(const std::filesystem::path& json_path) {
    std::ifstream is(json_path);
    if (!is) throw DataError("cannot read report: " + json_path.string());
    nlohmann::json j;
    is >> j;
    return from_json(j);
}

}  // namespace sfseg
