#include "sfseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace sfseg {
namespace {

namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937 sample_rng(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
    return std::mt19937(static_cast<std::mt19937::result_type>(
        splitmix64(splitmix64(seed ^ salt) + index)));
}

double uniform(std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

}  // namespace

const torch::Tensor& Dataset::label(std::size_t i) const {
    const auto& sample = samples_.at(i);
    if (!sample.label)
        throw DataError("sample '" + sample.id + "' has no label");
    label_reads_->fetch_add(1);
    return *sample.label;
}

bool Dataset::fully_labeled() const {
    return std::all_of(samples_.begin(), samples_.end(),
                       [](const SegSample& s) { return s.label.has_value(); });
}

std::vector<std::size_t> Dataset::shuffled_indices(std::uint64_t seed) const {
    std::vector<std::size_t> order(samples_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937 rng(static_cast<std::mt19937::result_type>(splitmix64(seed)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

torch::Tensor stack_images(const UnlabeledView& view, const std::vector<std::size_t>& order,
                           std::size_t first, std::size_t last) {
    std::vector<torch::Tensor> imgs;
    imgs.reserve(last - first);
    for (std::size_t i = first; i < last; ++i) imgs.push_back(view.image(order[i]));
    return torch::stack(imgs);
}

void SynthShiftSpec::validate() const {
    if (n_samples < 1) throw ConfigError("synth n_samples must be positive");
    if (image_size < 16 || image_size % 16 != 0)
        throw ConfigError("synth image_size must be a positive multiple of 16");
    if (shape_family != "ellipses" && shape_family != "blobs")
        throw ConfigError("synth shape_family must be 'ellipses' or 'blobs'");
    if (contrast_scale <= 0.0) throw ConfigError("synth contrast_scale must be > 0");
    if (noise_sigma < 0.0) throw ConfigError("synth noise_sigma must be >= 0");
}

namespace {

// Renders one scene: dim background, 1-3 bright elliptical (or blobby) shapes,
// softened edges, light texture noise. Returns image (1,S,S) and label (S,S).
SegSample render_scene(const SynthShiftSpec& spec, std::uint64_t index) {
    auto rng = sample_rng(spec.seed, /*salt=*/0, index);
    const int s = spec.image_size;
    const double bg = uniform(rng, 0.20, 0.28);
    auto img = torch::full({s, s}, bg, torch::kFloat32);
    auto lab = torch::zeros({s, s}, torch::kInt64);
    auto img_acc = img.accessor<float, 2>();
    auto lab_acc = lab.accessor<std::int64_t, 2>();

    const bool blobs = spec.shape_family == "blobs";
    const int n_shapes = 1 + static_cast<int>(uniform(rng, 0.0, 3.0));
    for (int k = 0; k < n_shapes; ++k) {
        const double fg = uniform(rng, 0.60, 0.88);
        const double margin = s / 8.0;
        const double cy = uniform(rng, margin, s - margin);
        const double cx = uniform(rng, margin, s - margin);
        double ry = uniform(rng, s / 16.0, s / 4.5);
        double rx = uniform(rng, s / 16.0, s / 4.5);
        const double theta = uniform(rng, 0.0, 2.0 * M_PI);
        // A blob is an ellipse whose radius wobbles with angle.
        const double wobble = blobs ? uniform(rng, 0.15, 0.40) : 0.0;
        const double phase = uniform(rng, 0.0, 2.0 * M_PI);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double u = dy * ct + dx * st;
                const double v = -dy * st + dx * ct;
                double scale = 1.0;
                if (wobble > 0.0) {
                    const double ang = std::atan2(v, u);
                    scale = 1.0 + wobble * std::sin(3.0 * ang + phase);
                }
                const double q = (u * u) / (ry * ry * scale * scale) +
                                 (v * v) / (rx * rx * scale * scale);
                if (q <= 1.0) {
                    img_acc[y][x] = static_cast<float>(fg);
                    lab_acc[y][x] = 1;
                }
            }
        }
    }

    // Soften shape borders with a 3x3 box filter, then add texture.
    namespace F = torch::nn::functional;
    auto soft = F::avg_pool2d(img.reshape({1, 1, s, s}),
                              F::AvgPool2dFuncOptions(3).stride(1).padding(1))
                    .reshape({s, s});
    std::normal_distribution<double> texture(0.0, 0.03);
    auto soft_acc = soft.accessor<float, 2>();
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            soft_acc[y][x] = static_cast<float>(
                std::clamp(soft_acc[y][x] + texture(rng), 0.0, 1.0));

    SegSample out;
    out.image = soft.reshape({1, s, s});
    out.label = lab;
    std::ostringstream id;
    id << "synth_" << std::setw(4) << std::setfill('0') << index;
    out.id = id.str();
    return out;
}

// The target-domain corruption: contrast compression about mid-gray, a darkening
// intensity shift, and additive Gaussian noise.
void apply_shift(SegSample& sample, const SynthShiftSpec& spec, std::uint64_t index) {
    auto rng = sample_rng(spec.seed, /*salt=*/0x7a11, index);
    auto img = sample.image;
    img = 0.5 + (img - 0.5) * spec.contrast_scale - spec.intensity_shift;
    if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        auto acc = img.accessor<float, 3>();
        for (std::int64_t c = 0; c < img.size(0); ++c)
            for (std::int64_t y = 0; y < img.size(1); ++y)
                for (std::int64_t x = 0; x < img.size(2); ++x)
                    acc[c][y][x] += static_cast<float>(noise(rng));
    }
    sample.image = img.clamp(0.0, 1.0);
    sample.id += "_t";
}

}  // namespace

std::pair<Dataset, Dataset> synth_shift(const SynthShiftSpec& spec) {
    spec.validate();
    std::vector<SegSample> source, target;
    source.reserve(static_cast<std::size_t>(spec.n_samples));
    target.reserve(static_cast<std::size_t>(spec.n_samples));
    for (int i = 0; i < spec.n_samples; ++i) {
        source.push_back(render_scene(spec, static_cast<std::uint64_t>(i)));
        auto shifted = render_scene(spec, static_cast<std::uint64_t>(i));
        apply_shift(shifted, spec, static_cast<std::uint64_t>(i));
        target.push_back(std::move(shifted));
    }
    std::ostringstream base;
    base << "synth-" << spec.shape_family << "-s" << spec.image_size << "-seed" << spec.seed;
    return {Dataset(base.str() + "-source", std::move(source)),
            Dataset(base.str() + "-target", std::move(target))};
}

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& m) {
    cv::Mat f;
    m.convertTo(f, CV_32F, 1.0 / 255.0);
    std::vector<cv::Mat> channels;
    cv::split(f, channels);
    std::vector<torch::Tensor> planes;
    planes.reserve(channels.size());
    for (auto& ch : channels)
        planes.push_back(
            torch::from_blob(ch.data, {ch.rows, ch.cols}, torch::kFloat32).clone());
    return torch::stack(planes);  // (C,H,W)
}

const std::set<std::string> kImageExts = {".png", ".jpg", ".jpeg", ".bmp",
                                          ".tif", ".tiff", ".ppm", ".pgm"};

}  // namespace

Dataset load_fundus(const fs::path& dir, int size, bool require_labels) {
    const fs::path images_dir = dir / "images";
    const fs::path masks_dir = dir / "masks";
    if (!fs::is_directory(images_dir))
        throw DataError("fundus layout requires an images/ directory under " + dir.string());
    const bool have_masks = fs::is_directory(masks_dir);
    if (require_labels && !have_masks)
        throw DataError("fundus layout requires a masks/ directory under " + dir.string());

    std::map<std::string, fs::path> masks;
    if (have_masks)
        for (const auto& entry : fs::directory_iterator(masks_dir))
            if (entry.is_regular_file() && kImageExts.count(entry.path().extension().string()))
                masks[entry.path().stem().string()] = entry.path();

    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(images_dir))
        if (entry.is_regular_file() && kImageExts.count(entry.path().extension().string()))
            images.push_back(entry.path());
    std::sort(images.begin(), images.end());
    if (images.empty()) throw DataError("no images found under " + images_dir.string());

    std::vector<std::string> missing;
    std::vector<SegSample> samples;
    for (const auto& img_path : images) {
        const std::string stem = img_path.stem().string();
        cv::Mat img = cv::imread(img_path.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw DataError("failed to decode image: " + img_path.string());
        if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
        if (img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
        cv::resize(img, img, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);

        SegSample sample;
        sample.id = stem;
        sample.image = mat_to_tensor(img).clamp(0.0, 1.0);

        auto it = masks.find(stem);
        if (it == masks.end()) {
            if (require_labels) {
                missing.push_back(stem);
                continue;
            }
        } else {
            cv::Mat mask = cv::imread(it->second.string(), cv::IMREAD_GRAYSCALE);
            if (mask.empty()) throw DataError("failed to decode mask: " + it->second.string());
            cv::resize(mask, mask, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
            auto m = torch::from_blob(mask.data, {mask.rows, mask.cols}, torch::kUInt8).clone();
            sample.label = (m.to(torch::kFloat32) / 255.0 >= 0.5).to(torch::kInt64);
        }
        samples.push_back(std::move(sample));
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "missing masks for " << missing.size() << " image(s):";
        for (const auto& stem : missing) os << ' ' << stem;
        throw DataError(os.str());
    }
    return Dataset(dir.filename().string(), std::move(samples));
}

Dataset load_volumes(const fs::path& dir, const std::string& modality, bool require_labels) {
    if (!fs::is_directory(dir)) throw DataError("volume directory not found: " + dir.string());
    std::string suffix = "_" + modality;
    std::transform(suffix.begin(), suffix.end(), suffix.begin(),
                   [](unsigned char c) { return std::tolower(c); });

    auto strip_nii = [](std::string name) {
        for (const char* ext : {".nii.gz", ".nii"}) {
            const std::size_t len = std::strlen(ext);
            if (name.size() > len && name.compare(name.size() - len, len, ext) == 0)
                return name.substr(0, name.size() - len);
        }
        return name;
    };

    std::vector<std::pair<std::string, fs::path>> cases;  // (case id, volume path)
    std::map<std::string, fs::path> labels;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        std::string lower = name;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (lower.find(".nii") == std::string::npos) continue;
        const std::string stem = strip_nii(lower);
        if (stem.size() > suffix.size() &&
            stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
            cases.emplace_back(stem.substr(0, stem.size() - suffix.size()), entry.path());
        } else if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, "_seg") == 0) {
            labels[stem.substr(0, stem.size() - 4)] = entry.path();
        }
    }
    std::sort(cases.begin(), cases.end());
    if (cases.empty())
        throw DataError("no '*" + suffix + ".nii[.gz]' volumes under " + dir.string());

    std::vector<SegSample> samples;
    for (const auto& [case_id, vol_path] : cases) {
        auto vol = read_nifti(vol_path).to(torch::kFloat32);
        // Per-volume z-score, then min-max to [0,1].
        const auto mean = vol.mean();
        const auto std = vol.std();
        vol = (vol - mean) / (std + 1e-8);
        const auto lo = vol.min(), hi = vol.max();
        const double span = (hi - lo).item<double>();
        vol = span > 0 ? (vol - lo) / (hi - lo) : torch::zeros_like(vol);

        SegSample sample;
        sample.id = case_id;
        sample.image = vol.unsqueeze(0);  // (1,D,H,W)

        auto it = labels.find(case_id);
        if (it != labels.end()) {
            auto lab = read_nifti(it->second).to(torch::kInt64);
            if (lab.sizes() != vol.sizes())
                throw DataError("label shape mismatch for case '" + case_id + "'");
            // BraTS convention: {0,1,2,4} -> {0,1,2,3}.
            auto remapped = torch::where(lab == 4, torch::full_like(lab, 3), lab);
            auto bad = (remapped < 0) | (remapped > 3);
            if (bad.any().item<bool>()) {
                auto values = std::get<0>(torch::_unique(lab.masked_select(bad)));
                std::ostringstream os;
                os << "unexpected label value(s) in case '" << case_id << "':";
                for (std::int64_t i = 0; i < values.numel(); ++i)
                    os << ' ' << values[i].item<std::int64_t>();
                throw DataError(os.str());
            }
            sample.label = remapped;
        } else if (require_labels) {
            throw DataError("missing '_seg' label volume for case '" + case_id + "'");
        }
        samples.push_back(std::move(sample));
    }
    return Dataset(dir.filename().string() + "-" + modality, std::move(samples));
}

}  // namespace sfseg
