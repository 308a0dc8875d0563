#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "sfseg/arch.hpp"

namespace sfseg {

/// Thrown for dataset layout or content problems.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One image (C, spatial...) in [0,1] with an optional integer label map
/// (spatial...) whose values are class indices ({0,1} for binary tasks).
struct SegSample {
    torch::Tensor image;
    std::optional<torch::Tensor> label;
    std::string id;
};

/// In-memory dataset. Label accesses are counted so tests can prove that
/// adaptation never touches target labels.
class Dataset {
public:
    Dataset() : label_reads_(std::make_shared<std::atomic<std::int64_t>>(0)) {}
    Dataset(std::string id, std::vector<SegSample> samples)
        : id_(std::move(id)),
          samples_(std::move(samples)),
          label_reads_(std::make_shared<std::atomic<std::int64_t>>(0)) {}

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    const std::string& id() const { return id_; }

    const torch::Tensor& image(std::size_t i) const { return samples_.at(i).image; }
    const std::string& sample_id(std::size_t i) const { return samples_.at(i).id; }
    bool has_label(std::size_t i) const { return samples_.at(i).label.has_value(); }
    bool fully_labeled() const;

    /// Counted label access; throws DataError when the sample is unlabeled.
    const torch::Tensor& label(std::size_t i) const;

    std::int64_t label_read_count() const { return label_reads_->load(); }

    /// Deterministic shuffle order for a given seed.
    std::vector<std::size_t> shuffled_indices(std::uint64_t seed) const;

private:
    std::string id_;
    std::vector<SegSample> samples_;
    std::shared_ptr<std::atomic<std::int64_t>> label_reads_;
};

/// Label-free view — the only dataset form the adaptation loops accept.
/// It exposes no label accessor, so target labels are unreachable by type.
class UnlabeledView {
public:
    explicit UnlabeledView(const Dataset& ds) : ds_(&ds) {}

    std::size_t size() const { return ds_->size(); }
    bool empty() const { return ds_->empty(); }
    const std::string& dataset_id() const { return ds_->id(); }
    const torch::Tensor& image(std::size_t i) const { return ds_->image(i); }
    const std::string& sample_id(std::size_t i) const { return ds_->sample_id(i); }
    std::vector<std::size_t> shuffled_indices(std::uint64_t seed) const {
        return ds_->shuffled_indices(seed);
    }

private:
    const Dataset* ds_;
};

/// Stacks dataset images [first, last) into a (B, C, spatial...) batch.
torch::Tensor stack_images(const UnlabeledView& view, const std::vector<std::size_t>& order,
                           std::size_t first, std::size_t last);

/// Seeded synthetic domain-shift pair. Source and target share per-index scene
/// geometry (paired sub-seeds); the target additionally passes through a
/// contrast/intensity/noise transform, so a null transform reproduces the
/// source bit for bit.
struct SynthShiftSpec {
    int n_samples = 200;
    int image_size = 64;
    std::string shape_family = "ellipses";  // "ellipses" or "blobs"
    double intensity_shift = 0.3;
    double contrast_scale = 0.6;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1234;

    void validate() const;
};

std::pair<Dataset, Dataset> synth_shift(const SynthShiftSpec& spec);

/// Loads paired 2D images from dir/images and dir/masks, matched by filename
/// stem. Images are bilinearly resized to (size, size) and scaled to [0,1];
/// masks are nearest-resized then binarized at 0.5. Missing masks are reported
/// in one aggregated error unless `require_labels` is false, in which case the
/// masks directory is optional.
Dataset load_fundus(const std::filesystem::path& dir, int size, bool require_labels = true);

/// Loads 3D volumes (NIfTI, optionally .gz). Every case needs a
/// `<case>_<modality>.nii[.gz]` per modality; labels come from
/// `<case>_seg.nii[.gz]`. Volumes are z-scored then min-max scaled to [0,1];
/// labels are remapped {0,1,2,4} -> {0,1,2,3}.
Dataset load_volumes(const std::filesystem::path& dir, const std::string& modality,
                     bool require_labels = true);

/// Minimal NIfTI-1 single-volume I/O (used by load_volumes and tests).
torch::Tensor read_nifti(const std::filesystem::path& path);
void write_nifti(const std::filesystem::path& path, const torch::Tensor& volume);

}  // namespace sfseg
