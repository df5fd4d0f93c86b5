#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrd/data/dataset.hpp"

namespace lrd {

enum class Family { FE_proxy, I2I_proxy, T2I_proxy };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

/// Deterministic synthetic dataset recipe. Each family injects artifacts in
/// a different frequency regime: FE re-synthesizes a local patch, I2I
/// resamples and re-sharpens globally, T2I adds periodic spectral peaks.
struct SyntheticDatasetSpec {
    std::uint64_t seed = 1;
    std::int64_t n_real = 400;
    std::int64_t n_fake_per_family = 400;
    std::vector<Family> families{Family::FE_proxy, Family::I2I_proxy, Family::T2I_proxy};
    std::int64_t image_size = 64;

    void validate() const;
};

/// Band-limited "authentic" image: 3-6 anisotropic Gaussian blobs over a
/// colored base plus low-amplitude octave (1/f-like) noise, clamped to [0,1].
LabeledImage gen_real(std::uint64_t seed, std::int64_t size);

/// Forgery proxy derived from a real base image.
LabeledImage gen_fake(const LabeledImage& base, Family family, std::uint64_t seed);

/// Materializes the whole recipe (reals first, then per-family fakes, each
/// derived from a fresh base image).
Dataset generate(const SyntheticDatasetSpec& spec);

/// Writes images as 8-bit PNGs plus "manifest.csv" (filename,label,family).
void write_dataset(const std::string& dir, const Dataset& data);

/// Loads "filename,label[,family]" rows (label in {0,1}) from a CSV next to
/// the image files, resizing each decoded image to resize_to.
Dataset load_folder(const std::string& dir, const std::string& label_file, std::int64_t resize_to);

}  // namespace lrd
