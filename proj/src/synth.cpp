#include "lrd/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrd/core/conv_ops.hpp"
#include "lrd/data/image_io.hpp"

namespace lrd {

namespace {

constexpr double kPi = 3.14159265358979323846;

float clamp01(double v) { return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v)); }

// bilinearly upsampled coarse noise grid, one octave of the 1/f-like field
void add_octave_noise(Tensor<float>& img, Rng& rng, std::int64_t grid, double amplitude) {
    const std::int64_t h = img.dim(1), w = img.dim(2);
    std::vector<double> node(static_cast<std::size_t>(3 * (grid + 1) * (grid + 1)));
    for (auto& v : node) v = rng.uniform(-1.0, 1.0);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double gy = static_cast<double>(y) * grid / h;
                const double gx = static_cast<double>(x) * grid / w;
                const std::int64_t y0 = static_cast<std::int64_t>(gy), x0 = static_cast<std::int64_t>(gx);
                const double fy = gy - y0, fx = gx - x0;
                const auto at = [&](std::int64_t yy, std::int64_t xx) {
                    return node[static_cast<std::size_t>((c * (grid + 1) + yy) * (grid + 1) + xx)];
                };
                const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0 + 1, x0)) +
                                 fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                img.data()[(c * h + y) * w + x] += static_cast<float>(amplitude * v);
            }
}

void paint_blobs(Tensor<float>& img, Rng& rng) {
    const std::int64_t h = img.dim(1), w = img.dim(2);
    const std::int64_t n_blobs = rng.uniform_int(3, 6);
    for (std::int64_t b = 0; b < n_blobs; ++b) {
        const double cx = rng.uniform(0.2, 0.8) * w;
        const double cy = rng.uniform(0.2, 0.8) * h;
        const double s1 = rng.uniform(0.10, 0.28) * w;
        const double s2 = rng.uniform(0.08, 0.28) * h;
        const double theta = rng.uniform(0.0, kPi);
        const double amp = rng.uniform(0.15, 0.5);
        const double col[3] = {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
                const double q = (u * u) / (s1 * s1) + (v * v) / (s2 * s2);
                if (q > 9.0) continue;
                const double g = amp * std::exp(-0.5 * q);
                for (std::int64_t c = 0; c < 3; ++c) img.data()[(c * h + y) * w + x] += static_cast<float>(col[c] * g);
            }
    }
}

Tensor<float> as_batch(const Tensor<float>& chw) {
    Tensor<float> out = Tensor<float>::zeros({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    std::copy(chw.values().begin(), chw.values().end(), out.values().begin());
    return out;
}

Tensor<float> from_batch(const Tensor<float>& nchw) {
    Tensor<float> out = Tensor<float>::zeros({nchw.dim(1), nchw.dim(2), nchw.dim(3)});
    std::copy(nchw.values().begin(), nchw.values().end(), out.values().begin());
    return out;
}

}  // namespace

std::string family_name(Family f) {
    switch (f) {
        case Family::FE_proxy: return "FE_proxy";
        case Family::I2I_proxy: return "I2I_proxy";
        case Family::T2I_proxy: return "T2I_proxy";
    }
    throw ValueError("family_name: bad family");
}

Family family_from_name(const std::string& name) {
    if (name == "FE_proxy") return Family::FE_proxy;
    if (name == "I2I_proxy") return Family::I2I_proxy;
    if (name == "T2I_proxy") return Family::T2I_proxy;
    throw ValueError("unknown forgery family '" + name + "'");
}

void SyntheticDatasetSpec::validate() const {
    if (n_real < 0 || n_fake_per_family < 0) throw ValueError("synth spec: negative counts");
    if (n_real == 0 && (families.empty() || n_fake_per_family == 0))
        throw ValueError("synth spec: at least one class must be non-empty");
    if (image_size < 32) throw ValueError("synth spec: image_size must be >= 32");
}

LabeledImage gen_real(std::uint64_t seed, std::int64_t size) {
    if (size < 32) throw ValueError("gen_real: size must be >= 32");
    Rng rng(seed);
    Tensor<float> img = Tensor<float>::zeros({3, size, size});
    for (std::int64_t c = 0; c < 3; ++c) {
        const float base = static_cast<float>(rng.uniform(0.25, 0.5));
        for (std::int64_t j = 0; j < size * size; ++j) img.data()[c * size * size + j] = base;
    }
    paint_blobs(img, rng);
    // three octaves, amplitudes halving, coarsest grid 4 (all energy well
    // below half-Nyquist)
    add_octave_noise(img, rng, 4, 0.030);
    add_octave_noise(img, rng, 8, 0.015);
    add_octave_noise(img, rng, 16, 0.0075);
    for (auto& v : img.values()) v = clamp01(v);

    LabeledImage out;
    out.pixels = img;
    out.label = kLabelReal;
    return out;
}

LabeledImage gen_fake(const LabeledImage& base, Family family, std::uint64_t seed) {
    if (base.label != kLabelReal) throw ValueError("gen_fake: base must be a real image");
    const std::int64_t size = base.pixels.dim(1);
    Rng rng(mix_seed(seed, 0xFA4E));
    LabeledImage out;
    out.label = kLabelFake;
    out.family = family_name(family);

    switch (family) {
        case Family::FE_proxy: {
            // re-synthesize a local patch: copy from an alternative scene and
            // overlay high-frequency edit noise, strictly inside the box
            Tensor<float> img = base.pixels.detached_copy();
            const std::int64_t bw = static_cast<std::int64_t>(rng.uniform(0.2, 0.4) * size);
            const std::int64_t bh = static_cast<std::int64_t>(rng.uniform(0.2, 0.4) * size);
            const std::int64_t x0 = rng.uniform_int(0, size - bw);
            const std::int64_t y0 = rng.uniform_int(0, size - bh);
            const LabeledImage donor = gen_real(mix_seed(seed, 0xD0A0), size);
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t y = y0; y < y0 + bh; ++y)
                    for (std::int64_t x = x0; x < x0 + bw; ++x) {
                        const std::size_t i = static_cast<std::size_t>((c * size + y) * size + x);
                        img.data()[i] = clamp01(donor.pixels.data()[i] + rng.uniform(-0.08, 0.08));
                    }
            out.pixels = img;
            break;
        }
        case Family::I2I_proxy: {
            // 4x resample round trip (wipes the finest texture octave and
            // leaves bilinear grid ramps) then a strong unsharp mask:
            // global smoothing plus overshoot halos around edges
            Tensor<float> b4 = as_batch(base.pixels);
            Tensor<float> down = bilinear_resize(b4, std::max<std::int64_t>(8, size / 4),
                                                 std::max<std::int64_t>(8, size / 4));
            Tensor<float> up = bilinear_resize(down, size, size);
            Tensor<float> blurred = gaussian_blur(up, 1.0);
            Tensor<float> img = Tensor<float>::zeros({3, size, size});
            for (std::int64_t j = 0; j < img.numel(); ++j)
                img.data()[j] = clamp01(up.data()[j] + 2.0 * (up.data()[j] - blurred.data()[j]) +
                                        rng.uniform(-0.02, 0.02));
            out.pixels = img;
            break;
        }
        case Family::T2I_proxy: {
            // two high-frequency gratings with seeded phases: strong isolated
            // spectral peaks, checkerboard-like
            const double f1 = 0.25, f2 = 0.375;  // cycles per pixel
            const double p1 = rng.uniform(0.0, 2.0 * kPi), p2 = rng.uniform(0.0, 2.0 * kPi);
            const double chan_w[3] = {1.0, 0.9, 0.8};
            Tensor<float> img = Tensor<float>::zeros({3, size, size});
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t y = 0; y < size; ++y)
                    for (std::int64_t x = 0; x < size; ++x) {
                        const double g = 0.05 * std::cos(2.0 * kPi * f1 * (x + y) + p1) +
                                         0.05 * std::cos(2.0 * kPi * f2 * x + p2);
                        const std::size_t i = static_cast<std::size_t>((c * size + y) * size + x);
                        img.data()[i] = clamp01(base.pixels.data()[i] + chan_w[c] * g);
                    }
            out.pixels = img;
            break;
        }
    }
    return out;
}

Dataset generate(const SyntheticDatasetSpec& spec) {
    spec.validate();
    Dataset data;
    for (std::int64_t i = 0; i < spec.n_real; ++i) {
        LabeledImage img = gen_real(mix_seed(spec.seed, static_cast<std::uint64_t>(i)), spec.image_size);
        std::ostringstream name;
        name << "real_" << i << ".png";
        img.name = name.str();
        data.push_back(std::move(img));
    }
    std::uint64_t fake_stream = 0x10000;
    for (Family fam : spec.families) {
        for (std::int64_t i = 0; i < spec.n_fake_per_family; ++i) {
            const std::uint64_t base_seed = mix_seed(spec.seed, fake_stream + static_cast<std::uint64_t>(i));
            LabeledImage base = gen_real(base_seed, spec.image_size);
            LabeledImage img = gen_fake(base, fam, mix_seed(base_seed, 0xF));
            std::ostringstream name;
            name << family_name(fam) << "_" << i << ".png";
            img.name = name.str();
            data.push_back(std::move(img));
        }
        fake_stream += 0x10000;
    }
    return data;
}

void write_dataset(const std::string& dir, const Dataset& data) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw IoError("write_dataset: cannot write manifest in '" + dir + "'");
    manifest << "filename,label,family\n";
    for (const auto& img : data) {
        if (img.name.empty()) throw ValueError("write_dataset: image without a filename");
        write_png_rgb8((fs::path(dir) / img.name).string(), img.pixels);
        manifest << img.name << "," << img.label << "," << img.family << "\n";
    }
}

Dataset load_folder(const std::string& dir, const std::string& label_file, std::int64_t resize_to) {
    namespace fs = std::filesystem;
    if (resize_to < 1) throw ValueError("load_folder: bad target size");
    std::ifstream csv(label_file);
    if (!csv) throw IoError("load_folder: cannot read label file '" + label_file + "'");
    Dataset data;
    std::string line;
    int lineno = 0;
    while (std::getline(csv, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("filename,", 0) == 0) continue;  // header
        std::stringstream ss(line);
        std::string fname, label_str, family;
        std::getline(ss, fname, ',');
        std::getline(ss, label_str, ',');
        std::getline(ss, family, ',');
        if (fname.empty() || label_str.empty())
            throw ValueError("load_folder: malformed row at line " + std::to_string(lineno));
        if (label_str != "0" && label_str != "1")
            throw ValueError("load_folder: label '" + label_str + "' at line " + std::to_string(lineno) +
                             " is not in {0,1}");
        LabeledImage img;
        Tensor<float> px = read_png_rgb8((fs::path(dir) / fname).string());
        if (px.dim(1) != resize_to || px.dim(2) != resize_to)
            px = from_batch(bilinear_resize(as_batch(px), resize_to, resize_to));
        img.pixels = px;
        img.label = label_str == "1" ? kLabelFake : kLabelReal;
        img.family = family;
        img.name = fname;
        data.push_back(std::move(img));
    }
    if (data.empty()) throw ValueError("load_folder: no rows in '" + label_file + "'");
    return data;
}

}  // namespace lrd
