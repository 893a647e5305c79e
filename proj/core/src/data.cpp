#include "fosnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fosnet/errors.hpp"
#include "fosnet/serialize.hpp"

namespace fosnet {

namespace fs = std::filesystem;
using nlohmann::json;

SyntheticSceneSpec SyntheticSceneSpec::defaults() {
    SyntheticSceneSpec s;
    s.scene_colors = {
        {0.80, 0.20, 0.20}, {0.20, 0.80, 0.20}, {0.20, 0.20, 0.80}, {0.80, 0.80, 0.20},
        {0.80, 0.20, 0.80}, {0.20, 0.80, 0.80}, {0.70, 0.50, 0.30}, {0.35, 0.35, 0.35},
    };
    s.object_colors = {
        {0.95, 0.95, 0.95}, {0.05, 0.05, 0.05}, {0.90, 0.55, 0.10},
        {0.55, 0.10, 0.90}, {0.10, 0.90, 0.55}, {0.90, 0.10, 0.55},
    };
    // Each scene has one signature object (p = 0.8) and two weaker
    // background objects (p = 0.3); scenes 6 and 7 reuse signatures 0 and 1
    // but with a disjoint background pair, so the full object pattern still
    // identifies the scene.  The background table below was picked to
    // maximize the exact accuracy of an ideal classifier that sees only the
    // object presence vector; regular offset patterns cap it near 55%, this
    // table reaches about 69%.
    static const std::size_t kBackgrounds[8][2] = {
        {1, 3}, {4, 5}, {3, 5}, {5, 0}, {2, 3}, {0, 4}, {2, 4}, {2, 3},
    };
    s.cooccurrence.assign(s.num_objects, std::vector<double>(s.num_scenes, 0.0));
    for (std::size_t scene = 0; scene < s.num_scenes; ++scene) {
        s.cooccurrence[scene % s.num_objects][scene] = 0.8;
        s.cooccurrence[kBackgrounds[scene][0]][scene] = 0.3;
        s.cooccurrence[kBackgrounds[scene][1]][scene] = 0.3;
    }
    return s;
}

void SyntheticSceneSpec::validate() const {
    if (num_scenes < 2) throw ConfigError("dataset needs at least 2 scenes");
    if (num_objects < 1) throw ConfigError("dataset needs at least 1 object kind");
    if (image_hw < 16) throw ConfigError("images smaller than 16x16 cannot hold glyphs");
    if (train_per_scene < 1 || val_per_scene < 1)
        throw ConfigError("both splits need at least one sample per scene");
    if (!(noise_amplitude >= 0.0 && noise_amplitude <= 0.5))
        throw ConfigError("noise amplitude must lie in [0, 0.5]");
    if (scene_colors.size() != num_scenes)
        throw ConfigError("expected " + std::to_string(num_scenes) + " scene colors, got " +
                          std::to_string(scene_colors.size()));
    if (object_colors.size() != num_objects)
        throw ConfigError("expected " + std::to_string(num_objects) + " object colors, got " +
                          std::to_string(object_colors.size()));
    auto check_color = [](const std::array<double, 3>& c, const char* what) {
        for (double v : c)
            if (!(v >= 0.0 && v <= 1.0))
                throw ConfigError(std::string(what) + " color component outside [0,1]");
    };
    for (const auto& c : scene_colors) check_color(c, "scene");
    for (const auto& c : object_colors) check_color(c, "object");
    if (cooccurrence.size() != num_objects)
        throw ConfigError("cooccurrence must have one row per object");
    for (const auto& row : cooccurrence) {
        if (row.size() != num_scenes)
            throw ConfigError("cooccurrence must have one column per scene");
        for (double p : row)
            if (!(p >= 0.0 && p <= 1.0))
                throw ConfigError("cooccurrence entries must be probabilities in [0,1]");
    }
    for (std::size_t scene = 0; scene < num_scenes; ++scene) {
        bool has_signal = false;
        for (std::size_t o = 0; o < num_objects; ++o)
            if (cooccurrence[o][scene] > 0.5) has_signal = true;
        if (!has_signal)
            throw ConfigError("scene " + std::to_string(scene) +
                              " has no object with placement probability > 0.5");
    }
}

namespace {

template <typename T>
void draw_glyph(TensorT<T>& img, std::size_t kind, const std::array<double, 3>& color,
                std::size_t top, std::size_t left, std::size_t sz) {
    const std::size_t shape = kind % 3;
    const double r = static_cast<double>(sz) / 2.0;
    const double cy = static_cast<double>(top) + r - 0.5;
    const double cx = static_cast<double>(left) + r - 0.5;
    for (std::size_t y = top; y < top + sz; ++y)
        for (std::size_t x = left; x < left + sz; ++x) {
            bool inside = true;
            if (shape == 1) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                inside = dy * dy + dx * dx <= r * r;
            } else if (shape == 2) {
                // upward triangle: row widens linearly from apex to base
                const std::size_t row = y - top;
                const std::size_t halfw = sz > 1 ? (row * (sz / 2)) / (sz - 1) : 0;
                const double dx = std::abs(static_cast<double>(x) - cx);
                inside = dx <= static_cast<double>(halfw) + 0.5;
            }
            if (inside)
                for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = static_cast<T>(color[c]);
        }
}

template <typename T>
SampleT<T> render_sample(const SyntheticSceneSpec& spec, std::size_t scene, Rng& rng) {
    const std::size_t hw = spec.image_hw;
    SampleT<T> s;
    s.scene_label = scene;
    s.object_multihot.assign(spec.num_objects, 0);
    s.image = TensorT<T>({hw, hw, 3});

    const auto& base = spec.scene_colors[scene];
    for (std::size_t y = 0; y < hw; ++y)
        for (std::size_t x = 0; x < hw; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v =
                    base[c] + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
                s.image(y, x, c) = static_cast<T>(std::clamp(v, 0.0, 1.0));
            }

    for (std::size_t o = 0; o < spec.num_objects; ++o)
        if (rng.bernoulli(spec.cooccurrence[o][scene])) s.object_multihot[o] = 1;
    bool any = false;
    for (auto v : s.object_multihot) any = any || v != 0;
    if (!any) s.object_multihot[rng.uniform_int(0, spec.num_objects - 1)] = 1;

    for (std::size_t o = 0; o < spec.num_objects; ++o) {
        if (!s.object_multihot[o]) continue;
        const std::size_t sz = rng.uniform_int(6, 9);
        const std::size_t top = rng.uniform_int(0, hw - sz);
        const std::size_t left = rng.uniform_int(0, hw - sz);
        draw_glyph(s.image, o, spec.object_colors[o], top, left, sz);
    }
    return s;
}

}  // namespace

template <typename T>
DatasetT<T> generate_dataset(const SyntheticSceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    DatasetT<T> ds;
    ds.spec = spec;

    auto fill_split = [&](std::vector<SampleT<T>>& out, std::size_t per_scene,
                          std::uint64_t split_tag) {
        out.reserve(spec.num_scenes * per_scene);
        for (std::size_t scene = 0; scene < spec.num_scenes; ++scene)
            for (std::size_t i = 0; i < per_scene; ++i) {
                Rng rng(mix_seed(seed, split_tag, scene * per_scene + i));
                out.push_back(render_sample<T>(spec, scene, rng));
            }
    };
    fill_split(ds.train, spec.train_per_scene, 1);
    fill_split(ds.val, spec.val_per_scene, 2);

    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    std::size_t count = 0;
    for (const auto& s : ds.train) {
        for (std::size_t i = 0; i < s.image.numel(); i += 3)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = static_cast<double>(s.image[i + c]);
                sum[c] += v;
                sq[c] += v * v;
            }
        count += s.image.numel() / 3;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / static_cast<double>(count);
        const double var = std::max(sq[c] / static_cast<double>(count) - mean * mean, 1e-12);
        ds.channel_mean[c] = static_cast<T>(mean);
        ds.channel_std[c] = static_cast<T>(std::sqrt(var));
    }
    return ds;
}

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize expects [H,W,C], got " + shape_str(img.shape()));
    const std::size_t H = img.extent(0), W = img.extent(1), C = img.extent(2);
    if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be non-empty");
    TensorT<T> out({out_h, out_w, C});
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(H - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(W - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < C; ++c) {
                const double top = (1.0 - wx) * static_cast<double>(img(y0, x0, c)) +
                                   wx * static_cast<double>(img(y0, x1, c));
                const double bot = (1.0 - wx) * static_cast<double>(img(y1, x0, c)) +
                                   wx * static_cast<double>(img(y1, x1, c));
                out(y, x, c) = static_cast<T>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> crop(const TensorT<T>& img, std::size_t top, std::size_t left, std::size_t size) {
    if (img.rank() != 3) throw ShapeError("crop expects [H,W,C], got " + shape_str(img.shape()));
    if (top + size > img.extent(0) || left + size > img.extent(1))
        throw ShapeError("crop window exceeds image bounds");
    const std::size_t C = img.extent(2);
    TensorT<T> out({size, size, C});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < C; ++c) out(y, x, c) = img(top + y, left + x, c);
    return out;
}

template <typename T>
TensorT<T> flip_horizontal(const TensorT<T>& img) {
    if (img.rank() != 3) throw ShapeError("flip expects [H,W,C], got " + shape_str(img.shape()));
    const std::size_t H = img.extent(0), W = img.extent(1), C = img.extent(2);
    TensorT<T> out(img.shape());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) out(y, x, c) = img(y, W - 1 - x, c);
    return out;
}

template <typename T>
TensorT<T> normalize_channels(const TensorT<T>& img, const std::array<T, 3>& mean,
                              const std::array<T, 3>& std) {
    if (img.rank() != 3 || img.extent(2) != 3)
        throw ShapeError("normalize expects [H,W,3], got " + shape_str(img.shape()));
    for (T s : std)
        if (!(s > T(0))) throw NumericError("channel std must be positive");
    TensorT<T> out(img.shape());
    for (std::size_t i = 0; i < img.numel(); i += 3)
        for (std::size_t c = 0; c < 3; ++c) out[i + c] = (img[i + c] - mean[c]) / std[c];
    return out;
}

template <typename T>
SampleT<T> augment(const SampleT<T>& s, const AugmentConfig& cfg, const std::array<T, 3>& mean,
                   const std::array<T, 3>& std, Rng& rng) {
    SampleT<T> out = s;
    const std::size_t hw = s.image.extent(0);
    if (cfg.rescale) {
        const double scale = rng.uniform(1.0, cfg.max_scale);
        const std::size_t new_hw =
            std::max(hw, static_cast<std::size_t>(std::lround(static_cast<double>(hw) * scale)));
        TensorT<T> big =
            new_hw == hw ? s.image : resize_bilinear(s.image, new_hw, new_hw);
        const std::size_t top = rng.uniform_int(0, new_hw - hw);
        const std::size_t left = rng.uniform_int(0, new_hw - hw);
        out.image = crop(big, top, left, hw);
    }
    if (cfg.flip && rng.bernoulli(0.5)) out.image = flip_horizontal(out.image);
    if (cfg.normalize) out.image = normalize_channels(out.image, mean, std);
    return out;
}

template <typename T>
SampleT<T> eval_transform(const SampleT<T>& s, const std::array<T, 3>& mean,
                          const std::array<T, 3>& std) {
    SampleT<T> out = s;
    out.image = normalize_channels(s.image, mean, std);
    return out;
}

template <typename T>
TensorT<T> onehot(std::size_t label, std::size_t num_classes) {
    if (label >= num_classes)
        throw ShapeError("label " + std::to_string(label) + " out of range for " +
                         std::to_string(num_classes) + " classes");
    TensorT<T> v({num_classes});
    v[label] = T(1);
    return v;
}

template <typename T>
BatchT<T> stack_samples(const std::vector<SampleT<T>>& samples, std::size_t num_scenes,
                        std::size_t num_objects) {
    if (samples.empty()) throw ShapeError("cannot stack an empty batch");
    const Shape& ishape = samples.front().image.shape();
    const std::size_t B = samples.size();
    const std::size_t per = samples.front().image.numel();
    BatchT<T> batch;
    batch.images = TensorT<T>({B, ishape[0], ishape[1], ishape[2]});
    batch.scene_onehot = TensorT<T>({B, num_scenes});
    batch.object_multihot = TensorT<T>({B, num_objects});
    batch.labels.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const SampleT<T>& s = samples[b];
        if (s.image.shape() != ishape)
            throw ShapeError("batch mixes image shapes " + shape_str(ishape) + " and " +
                             shape_str(s.image.shape()));
        if (s.scene_label >= num_scenes || s.object_multihot.size() != num_objects)
            throw ShapeError("sample labels do not match dataset dimensions");
        std::copy(s.image.data(), s.image.data() + per, batch.images.data() + b * per);
        batch.scene_onehot(b, s.scene_label) = T(1);
        for (std::size_t o = 0; o < num_objects; ++o)
            batch.object_multihot(b, o) = static_cast<T>(s.object_multihot[o]);
        batch.labels[b] = s.scene_label;
    }
    return batch;
}

BalancedBatcher::BalancedBatcher(std::vector<std::size_t> labels, std::size_t num_classes,
                                 std::size_t batch_size)
    : batch_size_(batch_size), balance_within_batch_(batch_size >= num_classes) {
    if (num_classes < 1) throw ConfigError("balanced batcher needs at least one class");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (batch_size > labels.size())
        throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds split size " +
                          std::to_string(labels.size()));
    by_class_.assign(num_classes, {});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes)
            throw ConfigError("label " + std::to_string(labels[i]) + " out of range");
        by_class_[labels[i]].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (by_class_[c].empty())
            throw ConfigError("class " + std::to_string(c) + " has no samples to balance");
}

std::size_t BalancedBatcher::samples_per_epoch() const {
    std::size_t m = by_class_.front().size();
    for (const auto& v : by_class_) m = std::min(m, v.size());
    return m * by_class_.size();
}

std::vector<std::vector<std::size_t>> BalancedBatcher::epoch(Rng& rng) const {
    const std::size_t num_classes = by_class_.size();
    std::size_t m = by_class_.front().size();
    for (const auto& v : by_class_) m = std::min(m, v.size());

    std::vector<std::vector<std::size_t>> pools = by_class_;
    for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng.engine());

    std::vector<std::size_t> order(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) order[c] = c;

    std::vector<std::size_t> stream;
    stream.reserve(m * num_classes);
    for (std::size_t round = 0; round < m; ++round) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t c : order) stream.push_back(pools[c][round]);
    }

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < stream.size(); start += batch_size_) {
        const std::size_t end = std::min(start + batch_size_, stream.size());
        batches.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                             stream.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

json spec_to_json(const SyntheticSceneSpec& spec) {
    json j;
    j["num_scenes"] = spec.num_scenes;
    j["num_objects"] = spec.num_objects;
    j["image_hw"] = spec.image_hw;
    j["train_per_scene"] = spec.train_per_scene;
    j["val_per_scene"] = spec.val_per_scene;
    j["noise_amplitude"] = spec.noise_amplitude;
    j["scene_colors"] = spec.scene_colors;
    j["object_colors"] = spec.object_colors;
    j["cooccurrence"] = spec.cooccurrence;
    return j;
}

SyntheticSceneSpec spec_from_json(const json& j) {
    SyntheticSceneSpec d = SyntheticSceneSpec::defaults();
    SyntheticSceneSpec s;
    s.num_scenes = j.value("num_scenes", d.num_scenes);
    s.num_objects = j.value("num_objects", d.num_objects);
    s.image_hw = j.value("image_hw", d.image_hw);
    s.train_per_scene = j.value("train_per_scene", d.train_per_scene);
    s.val_per_scene = j.value("val_per_scene", d.val_per_scene);
    s.noise_amplitude = j.value("noise_amplitude", d.noise_amplitude);
    const bool default_shape = s.num_scenes == d.num_scenes && s.num_objects == d.num_objects;
    s.scene_colors = j.contains("scene_colors")
                         ? j.at("scene_colors").get<std::vector<std::array<double, 3>>>()
                         : (default_shape ? d.scene_colors
                                          : std::vector<std::array<double, 3>>{});
    s.object_colors = j.contains("object_colors")
                          ? j.at("object_colors").get<std::vector<std::array<double, 3>>>()
                          : (default_shape ? d.object_colors
                                           : std::vector<std::array<double, 3>>{});
    s.cooccurrence = j.contains("cooccurrence")
                         ? j.at("cooccurrence").get<std::vector<std::vector<double>>>()
                         : (default_shape ? d.cooccurrence
                                          : std::vector<std::vector<double>>{});
    s.validate();
    return s;
}

SyntheticSceneSpec spec_from_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset spec " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed dataset spec " + path.string() + ": " + e.what());
    }
    try {
        return spec_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("bad dataset spec " + path.string() + ": " + e.what());
    }
}

template <typename T>
void save_dataset(const fs::path& dir, const DatasetT<T>& ds) {
    fs::create_directories(dir / "train");
    fs::create_directories(dir / "val");
    json index;
    index["version"] = 1;
    index["spec"] = spec_to_json(ds.spec);
    index["channel_mean"] = ds.channel_mean;
    index["channel_std"] = ds.channel_std;

    auto dump_split = [&](const std::vector<SampleT<T>>& split, const std::string& name) {
        json rows = json::array();
        char buf[32];
        for (std::size_t i = 0; i < split.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s/%06zu.fost", name.c_str(), i);
            write_fost(dir / buf, split[i].image);
            json row;
            row["file"] = buf;
            row["scene"] = split[i].scene_label;
            row["objects"] = split[i].object_multihot;
            rows.push_back(std::move(row));
        }
        index["splits"][name] = std::move(rows);
    };
    dump_split(ds.train, "train");
    dump_split(ds.val, "val");

    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw IoError("cannot open " + (dir / "index.json").string() + " for writing");
    out << index.dump(2) << "\n";
}

template <typename T>
DatasetT<T> load_dataset(const fs::path& dir) {
    const fs::path ipath = dir / "index.json";
    std::ifstream in(ipath);
    if (!in) throw IoError("cannot open dataset index " + ipath.string());
    json index;
    try {
        in >> index;
    } catch (const json::exception& e) {
        throw IoError("malformed dataset index " + ipath.string() + ": " + e.what());
    }
    if (index.value("version", 0) != 1)
        throw IoError("unsupported dataset index version in " + ipath.string());

    DatasetT<T> ds;
    try {
        ds.spec = spec_from_json(index.at("spec"));
        ds.channel_mean = index.at("channel_mean").get<std::array<T, 3>>();
        ds.channel_std = index.at("channel_std").get<std::array<T, 3>>();
        auto read_split = [&](std::vector<SampleT<T>>& out, const char* name) {
            for (const auto& row : index.at("splits").at(name)) {
                SampleT<T> s;
                s.image = read_fost<T>(dir / row.at("file").get<std::string>());
                s.scene_label = row.at("scene").get<std::size_t>();
                s.object_multihot = row.at("objects").get<std::vector<std::uint8_t>>();
                if (s.scene_label >= ds.spec.num_scenes ||
                    s.object_multihot.size() != ds.spec.num_objects)
                    throw IoError("inconsistent labels in " + ipath.string());
                out.push_back(std::move(s));
            }
        };
        read_split(ds.train, "train");
        read_split(ds.val, "val");
    } catch (const json::exception& e) {
        throw IoError("bad dataset index " + ipath.string() + ": " + e.what());
    }
    return ds;
}

#define FOSNET_INSTANTIATE_DATA(T)                                                              \
    template struct SampleT<T>;                                                                 \
    template DatasetT<T> generate_dataset<T>(const SyntheticSceneSpec&, std::uint64_t);         \
    template TensorT<T> resize_bilinear<T>(const TensorT<T>&, std::size_t, std::size_t);        \
    template TensorT<T> crop<T>(const TensorT<T>&, std::size_t, std::size_t, std::size_t);      \
    template TensorT<T> flip_horizontal<T>(const TensorT<T>&);                                  \
    template TensorT<T> normalize_channels<T>(const TensorT<T>&, const std::array<T, 3>&,       \
                                              const std::array<T, 3>&);                         \
    template SampleT<T> augment<T>(const SampleT<T>&, const AugmentConfig&,                     \
                                   const std::array<T, 3>&, const std::array<T, 3>&, Rng&);     \
    template SampleT<T> eval_transform<T>(const SampleT<T>&, const std::array<T, 3>&,           \
                                          const std::array<T, 3>&);                             \
    template TensorT<T> onehot<T>(std::size_t, std::size_t);                                    \
    template BatchT<T> stack_samples<T>(const std::vector<SampleT<T>>&, std::size_t,            \
                                        std::size_t);                                           \
    template void save_dataset<T>(const fs::path&, const DatasetT<T>&);                         \
    template DatasetT<T> load_dataset<T>(const fs::path&);

FOSNET_INSTANTIATE_DATA(float)
FOSNET_INSTANTIATE_DATA(double)

#undef FOSNET_INSTANTIATE_DATA

}  // namespace fosnet
