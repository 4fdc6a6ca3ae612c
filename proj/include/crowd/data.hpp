#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crowd/density.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ images

// 8-bit raster, 1 (gray) or 3 (RGB) interleaved channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;
};

// (1, 3, h, w) floats in [0, 1]; gray input is replicated across channels.
Tensor4 image_to_tensor(const Image8& image);

class ImageDecoder {
public:
    virtual ~ImageDecoder() = default;
    virtual Image8 decode(const std::filesystem::path& path) const = 0;
};

// Binary PGM (P5) and PPM (P6), maxval up to 65535.
class NetpbmDecoder : public ImageDecoder {
public:
    Image8 decode(const std::filesystem::path& path) const override;
};

// Netpbm by extension, everything else through OpenCV when it is compiled in.
std::unique_ptr<ImageDecoder> default_decoder();

void write_netpbm(const std::filesystem::path& path, const Image8& image);

// -------------------------------------------------------------- annotations

struct Annotation {
    std::string image;
    PointSet points;
    std::size_t clamped = 0;  // points moved inside the image while parsing
};

// Parses {"image", "width", "height", "points": [[x, y], ...]}. Malformed JSON
// is reported with its line and column; out-of-bounds points are clamped.
Annotation parse_annotation(const std::string& text, const std::string& source = "<string>");
Annotation load_annotation(const std::filesystem::path& path);
nlohmann::json annotation_to_json(const Annotation& annotation);
void save_annotation(const std::filesystem::path& path, const Annotation& annotation);

// ----------------------------------------------------------------- manifest

struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path annotation;
};

// CSV "image_path,annotation_path"; relative paths resolve against `root`.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::string split = "all";

    std::filesystem::path image_path(std::size_t i) const;
    std::filesystem::path annotation_path(std::size_t i) const;
    std::string id(std::size_t i) const;  // image file stem
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// -------------------------------------------------------------------- load

struct Sample {
    std::string id;
    Tensor4 image;  // (1, 3, h, w)
    PointSet points;
};

using Dataset = std::vector<Sample>;

struct SkippedEntry {
    std::string id;
    std::string reason;
};

struct LoadResult {
    Dataset samples;
    std::vector<SkippedEntry> skipped;
    std::size_t clamped_points = 0;
};

struct LoadOptions {
    // Record undecodable entries in `skipped` instead of throwing.
    bool skip_unreadable = false;
};

LoadResult load_dataset(const DatasetManifest& manifest, const ImageDecoder& decoder,
                        const LoadOptions& options = {});

// ------------------------------------------------------------------- synth

struct SynthConfig {
    std::size_t train_count = 8;
    std::size_t test_count = 4;
    std::size_t width = 64;
    std::size_t height = 64;
    std::size_t min_heads = 1;
    std::size_t max_heads = 20;
    double head_radius = 3.0;
    double noise = 0.05;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthImage {
    std::string id;
    Image8 image;
    PointSet points;
};

// Dark discs ("heads") on a noisy light background, train images first.
std::vector<SynthImage> synth_images(const SynthConfig& cfg);

struct SynthManifests {
    std::filesystem::path train;
    std::filesystem::path test;
};

// Writes images/, annotations/, train.csv and test.csv under `out_dir`.
SynthManifests synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// In-memory equivalent of synth_generate followed by load_dataset.
Sample to_sample(const SynthImage& synth);

}  // namespace crowd
