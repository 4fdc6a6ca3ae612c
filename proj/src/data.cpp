#include "crowd/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#ifdef CROWD_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

#include "crowd/parallel.hpp"

namespace crowd {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ images

Tensor4 image_to_tensor(const Image8& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw DataError("image: unsupported channel count " + std::to_string(image.channels));
    }
    Tensor4 t({1, 3, image.height, image.width});
    const std::size_t plane = image.height * image.width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t src = image.channels == 1 ? i : i * 3 + c;
            t[c * plane + i] = static_cast<float>(image.pixels[src]) / 255.0f;
        }
    }
    return t;
}

namespace {

std::size_t read_header_int(std::istream& in, const fs::path& path) {
    // Skip whitespace and '#' comments between header fields.
    for (;;) {
        const int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    std::size_t v = 0;
    if (!(in >> v)) throw DataError(path.string() + ": malformed netpbm header");
    return v;
}

std::string lower_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

#ifdef CROWD_HAVE_OPENCV
class OpenCvDecoder : public ImageDecoder {
public:
    Image8 decode(const fs::path& path) const override {
        cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
        if (m.empty()) throw DataError(path.string() + ": cannot decode image");
        if (m.depth() != CV_8U) m.convertTo(m, CV_8U, 1.0 / 257.0);
        Image8 img;
        img.width = static_cast<std::size_t>(m.cols);
        img.height = static_cast<std::size_t>(m.rows);
        if (m.channels() == 1) {
            img.channels = 1;
        } else {
            cv::Mat rgb;
            cv::cvtColor(m, rgb, m.channels() == 4 ? cv::COLOR_BGRA2RGB : cv::COLOR_BGR2RGB);
            m = rgb;
            img.channels = 3;
        }
        img.pixels.resize(img.width * img.height * img.channels);
        for (int y = 0; y < m.rows; ++y) {
            const std::uint8_t* row = m.ptr<std::uint8_t>(y);
            std::copy(row, row + img.width * img.channels,
                      img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width * img.channels));
        }
        return img;
    }
};
#endif

class DispatchingDecoder : public ImageDecoder {
public:
    Image8 decode(const fs::path& path) const override {
        const std::string ext = lower_extension(path);
        if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return netpbm_.decode(path);
#ifdef CROWD_HAVE_OPENCV
        return opencv_.decode(path);
#else
        throw DataError(path.string() + ": unsupported image format '" + ext +
                        "' (this build reads .pgm/.ppm only)");
#endif
    }

private:
    NetpbmDecoder netpbm_;
#ifdef CROWD_HAVE_OPENCV
    OpenCvDecoder opencv_;
#endif
};

}  // namespace

Image8 NetpbmDecoder::decode(const fs::path& path) const {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open image");
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (!in || (magic != "P5" && magic != "P6")) {
        throw DataError(path.string() + ": not a binary PGM/PPM image");
    }
    Image8 img;
    img.channels = magic == "P5" ? 1 : 3;
    img.width = read_header_int(in, path);
    img.height = read_header_int(in, path);
    const std::size_t maxval = read_header_int(in, path);
    if (maxval == 0 || maxval > 65535 || img.width == 0 || img.height == 0) {
        throw DataError(path.string() + ": invalid netpbm header values");
    }
    in.get();  // single whitespace before the raster
    const std::size_t samples = img.width * img.height * img.channels;
    img.pixels.resize(samples);
    if (maxval < 256) {
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(samples));
        if (!in) throw DataError(path.string() + ": truncated raster");
        if (maxval != 255) {
            for (auto& p : img.pixels) {
                p = static_cast<std::uint8_t>(std::lround(255.0 * p / static_cast<double>(maxval)));
            }
        }
    } else {
        std::vector<unsigned char> raw(samples * 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) throw DataError(path.string() + ": truncated raster");
        for (std::size_t i = 0; i < samples; ++i) {
            const double v = (raw[2 * i] << 8) | raw[2 * i + 1];
            img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
        }
    }
    return img;
}

std::unique_ptr<ImageDecoder> default_decoder() { return std::make_unique<DispatchingDecoder>(); }

void write_netpbm(const fs::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw DataError("write_netpbm: unsupported channel count");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << (image.channels == 1 ? "P5" : "P6") << '\n'
        << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

// -------------------------------------------------------------- annotations

namespace {

std::string line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

double clamp_inside(double v, std::size_t extent, bool& moved) {
    const double hi = std::nextafter(static_cast<double>(extent), 0.0);
    if (!std::isfinite(v)) throw DataError("annotation: non-finite coordinate");
    const double c = std::clamp(v, 0.0, hi);
    moved = moved || c != v;
    return c;
}

}  // namespace

Annotation parse_annotation(const std::string& text, const std::string& source) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(source + ": malformed JSON at " + line_col(text, e.byte == 0 ? 0 : e.byte - 1) +
                        ": " + e.what());
    }
    Annotation a;
    try {
        a.image = j.value("image", std::string{});
        a.points.width = j.at("width").get<std::size_t>();
        a.points.height = j.at("height").get<std::size_t>();
        for (const auto& p : j.at("points")) {
            if (!p.is_array() || p.size() != 2) {
                throw DataError(source + ": each point must be an [x, y] pair");
            }
            bool moved = false;
            Point pt{clamp_inside(p[0].get<double>(), a.points.width, moved),
                     clamp_inside(p[1].get<double>(), a.points.height, moved)};
            if (moved) ++a.clamped;
            a.points.points.push_back(pt);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(source + ": invalid annotation: " + e.what());
    }
    if (a.points.width == 0 || a.points.height == 0) {
        throw DataError(source + ": image size must be positive");
    }
    return a;
}

Annotation load_annotation(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open annotation " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_annotation(ss.str(), path.string());
}

nlohmann::json annotation_to_json(const Annotation& a) {
    nlohmann::json pts = nlohmann::json::array();
    for (const Point& p : a.points.points) pts.push_back({p.x, p.y});
    return {{"image", a.image},
            {"width", a.points.width},
            {"height", a.points.height},
            {"points", pts}};
}

void save_annotation(const fs::path& path, const Annotation& a) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << annotation_to_json(a).dump() << '\n';
}

// ----------------------------------------------------------------- manifest

fs::path DatasetManifest::image_path(std::size_t i) const {
    const fs::path& p = entries.at(i).image;
    return p.is_absolute() ? p : root / p;
}

fs::path DatasetManifest::annotation_path(std::size_t i) const {
    const fs::path& p = entries.at(i).annotation;
    return p.is_absolute() ? p : root / p;
}

std::string DatasetManifest::id(std::size_t i) const { return entries.at(i).image.stem().string(); }

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line == "image_path,annotation_path") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": expected 'image_path,annotation_path'");
        }
        m.entries.push_back({line.substr(0, comma), line.substr(comma + 1)});
        const std::string id = m.id(m.entries.size() - 1);
        if (!ids.insert(id).second) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": duplicate image id '" +
                            id + "'");
        }
        for (const fs::path& p : {m.image_path(m.entries.size() - 1),
                                  m.annotation_path(m.entries.size() - 1)}) {
            if (!fs::exists(p)) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing file " +
                                p.string());
            }
        }
    }
    return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    const fs::path base = path.parent_path();
    out << "image_path,annotation_path\n";
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const fs::path img = manifest.image_path(i);
        const fs::path ann = manifest.annotation_path(i);
        out << fs::relative(img, base.empty() ? fs::path(".") : base).generic_string() << ','
            << fs::relative(ann, base.empty() ? fs::path(".") : base).generic_string() << '\n';
    }
}

// -------------------------------------------------------------------- load

LoadResult load_dataset(const DatasetManifest& manifest, const ImageDecoder& decoder,
                        const LoadOptions& options) {
    const std::size_t n = manifest.entries.size();
    std::vector<Sample> samples(n);
    std::vector<std::string> errors(n);
    std::vector<std::size_t> clamped(n, 0);

#pragma omp parallel for schedule(dynamic) if (parallel::enabled())
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        try {
            Annotation a = load_annotation(manifest.annotation_path(k));
            Image8 img = decoder.decode(manifest.image_path(k));
            if (img.width != a.points.width || img.height != a.points.height) {
                throw DataError(manifest.annotation_path(k).string() + ": annotation size " +
                                std::to_string(a.points.width) + "x" +
                                std::to_string(a.points.height) + " does not match image " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
            }
            samples[k] = Sample{manifest.id(k), image_to_tensor(img), std::move(a.points)};
            clamped[k] = a.clamped;
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    }

    LoadResult result;
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) {
            if (!options.skip_unreadable) throw DataError(errors[i]);
            result.skipped.push_back({manifest.id(i), errors[i]});
            continue;
        }
        result.clamped_points += clamped[i];
        result.samples.push_back(std::move(samples[i]));
    }
    return result;
}

// ------------------------------------------------------------------- synth

void SynthConfig::validate() const {
    if (width == 0 || height == 0) throw std::invalid_argument("synth: image size must be positive");
    if (min_heads > max_heads) throw std::invalid_argument("synth: min_heads exceeds max_heads");
    if (max_heads > 64) throw std::invalid_argument("synth: head count range must lie within [0, 64]");
    if (!(head_radius > 0.0)) throw std::invalid_argument("synth: head_radius must be positive");
    if (noise < 0.0) throw std::invalid_argument("synth: noise must be non-negative");
}

std::vector<SynthImage> synth_images(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> heads(cfg.min_heads, cfg.max_heads);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(cfg.width));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(cfg.height));
    std::normal_distribution<double> noise(0.0, cfg.noise);
    constexpr double kBackground = 0.8;
    constexpr double kHead = 0.2;

    std::vector<SynthImage> out;
    const std::size_t total = cfg.train_count + cfg.test_count;
    for (std::size_t i = 0; i < total; ++i) {
        SynthImage s;
        std::ostringstream id;
        id << (i < cfg.train_count ? "train_" : "test_") << std::setw(4) << std::setfill('0')
           << (i < cfg.train_count ? i : i - cfg.train_count);
        s.id = id.str();
        s.points.width = cfg.width;
        s.points.height = cfg.height;
        const std::size_t count = heads(rng);
        for (std::size_t h = 0; h < count; ++h) {
            // Quarter-pixel grid keeps coordinates exact in decimal JSON.
            const double x = std::floor(ux(rng) * 4.0) / 4.0;
            const double y = std::floor(uy(rng) * 4.0) / 4.0;
            s.points.points.push_back({x, y});
        }

        std::vector<double> value(cfg.width * cfg.height, kBackground);
        const double r2 = cfg.head_radius * cfg.head_radius;
        for (const Point& p : s.points.points) {
            for (std::size_t y = 0; y < cfg.height; ++y) {
                for (std::size_t x = 0; x < cfg.width; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - p.x;
                    const double dy = static_cast<double>(y) + 0.5 - p.y;
                    if (dx * dx + dy * dy <= r2) value[y * cfg.width + x] = kHead;
                }
            }
        }
        s.image.width = cfg.width;
        s.image.height = cfg.height;
        s.image.channels = 1;
        s.image.pixels.resize(value.size());
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double v = std::clamp(value[k] + (cfg.noise > 0.0 ? noise(rng) : 0.0), 0.0, 1.0);
            s.image.pixels[k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        out.push_back(std::move(s));
    }
    return out;
}

SynthManifests synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
    const std::vector<SynthImage> images = synth_images(cfg);
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "annotations");
    DatasetManifest train;
    DatasetManifest test;
    train.root = test.root = out_dir;
    train.split = "train";
    test.split = "test";
    for (std::size_t i = 0; i < images.size(); ++i) {
        const SynthImage& s = images[i];
        const fs::path img = fs::path("images") / (s.id + ".pgm");
        const fs::path ann = fs::path("annotations") / (s.id + ".json");
        write_netpbm(out_dir / img, s.image);
        save_annotation(out_dir / ann, Annotation{img.filename().string(), s.points, 0});
        (i < cfg.train_count ? train : test).entries.push_back({img, ann});
    }
    SynthManifests m{out_dir / "train.csv", out_dir / "test.csv"};
    write_manifest(m.train, train);
    write_manifest(m.test, test);
    return m;
}

Sample to_sample(const SynthImage& synth) {
    return Sample{synth.id, image_to_tensor(synth.image), synth.points};
}

}  // namespace crowd
