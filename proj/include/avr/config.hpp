#pragma once

// Pipeline configuration: one sectioned key = value file (a TOML subset:
// strings, integers, floats, booleans, '#' comments), overridable by
// AVR_<SECTION>_<KEY> environment variables and then by CLI flags.
//
// Every field is listed once in visit_fields; parsing, serialization and
// environment overrides all go through that list, so parse -> serialize ->
// parse is the identity.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "avr/annotations.hpp"
#include "avr/binary_io.hpp"
#include "avr/error.hpp"
#include "avr/feature_assembly.hpp"
#include "avr/lstm.hpp"
#include "avr/optical_flow.hpp"

namespace avr {

struct PathsConfig {
    std::string frames_dir = "frames";           // <video_id>/<000000>.png
    std::string detections = "detections.json";
    std::string fish_probs = "fish_probs.json";
    std::string events = "events.json";
    std::string output_dir = "out";
    std::string train_videos;                    // optional manifests of video ids
    std::string test_videos;
    std::string box_labels_dir;                  // YOLO label files, <image_id>.txt
    std::string box_train_manifest;
    std::string box_test_manifest;
    std::string frame_labels_train;              // image_id,label CSV
    std::string frame_labels_test;

    bool operator==(const PathsConfig&) const = default;
};

struct FeatureConfig {
    double max_disp = 20.0;   // flow clamp in pixels before normalization
    int flow_grid = 32;
    int eval_stride = 1;
    int negative_stride = 6;

    bool operator==(const FeatureConfig&) const = default;
};

struct ModelConfig {
    int num_layers = 2;
    int hidden_size = 256;
    double validation_fraction = 0.2;  // share of training videos held out for the pocket rule

    bool operator==(const ModelConfig&) const = default;
};

struct PipelineConfig {
    PathsConfig paths;
    TvL1Params flow;
    FeatureConfig features;
    ModelConfig model;
    TrainConfig train;
    ClassMap classes;
    int jobs = 1;

    bool operator==(const PipelineConfig& o) const {
        return paths == o.paths && flow == o.flow && features == o.features && model == o.model &&
               train.learning_rate == o.train.learning_rate && train.momentum == o.train.momentum &&
               train.epochs == o.train.epochs && train.batch_size == o.train.batch_size && train.seed == o.train.seed &&
               train.l2 == o.train.l2 && classes == o.classes && jobs == o.jobs;
    }

    void validate() const {
        flow.validate();
        train.validate();
        if (!(features.max_disp > 0)) throw Error(ErrorKind::config, "features.max_disp must be positive");
        if (features.flow_grid < 1) throw Error(ErrorKind::config, "features.flow_grid must be >= 1");
        if (features.eval_stride < 1 || features.negative_stride < 1)
            throw Error(ErrorKind::config, "snippet strides must be >= 1");
        LstmLayout{model.num_layers, model.hidden_size, FeatureLayout{features.flow_grid}.width()}.validate();
        if (!(model.validation_fraction > 0 && model.validation_fraction < 1))
            throw Error(ErrorKind::config, "model.validation_fraction must lie in (0,1)");
        std::set<int> ids(classes.external_id.begin(), classes.external_id.end());
        if (ids.size() != kNumObjectClasses) throw Error(ErrorKind::config, "class ids must be distinct");
        if (jobs < 1) throw Error(ErrorKind::config, "jobs must be >= 1");
    }

    FeatureLayout feature_layout() const { return {features.flow_grid}; }

    LstmLayout lstm_layout() const { return {model.num_layers, model.hidden_size, feature_layout().width()}; }
};

/// Calls fn("section.key", field) for every field, in file order.
template <typename Config, typename Fn>
void visit_fields(Config& c, Fn&& fn) {
    fn("paths.frames_dir", c.paths.frames_dir);
    fn("paths.detections", c.paths.detections);
    fn("paths.fish_probs", c.paths.fish_probs);
    fn("paths.events", c.paths.events);
    fn("paths.output_dir", c.paths.output_dir);
    fn("paths.train_videos", c.paths.train_videos);
    fn("paths.test_videos", c.paths.test_videos);
    fn("paths.box_labels_dir", c.paths.box_labels_dir);
    fn("paths.box_train_manifest", c.paths.box_train_manifest);
    fn("paths.box_test_manifest", c.paths.box_test_manifest);
    fn("paths.frame_labels_train", c.paths.frame_labels_train);
    fn("paths.frame_labels_test", c.paths.frame_labels_test);
    fn("optical_flow.lambda", c.flow.lambda);
    fn("optical_flow.theta", c.flow.theta);
    fn("optical_flow.tau", c.flow.tau);
    fn("optical_flow.n_scales", c.flow.n_scales);
    fn("optical_flow.zoom", c.flow.zoom);
    fn("optical_flow.n_warps", c.flow.n_warps);
    fn("optical_flow.max_iters", c.flow.max_iters);
    fn("optical_flow.stop_eps", c.flow.stop_eps);
    fn("features.max_disp", c.features.max_disp);
    fn("features.flow_grid", c.features.flow_grid);
    fn("features.eval_stride", c.features.eval_stride);
    fn("features.negative_stride", c.features.negative_stride);
    fn("model.num_layers", c.model.num_layers);
    fn("model.hidden_size", c.model.hidden_size);
    fn("model.validation_fraction", c.model.validation_fraction);
    fn("train.learning_rate", c.train.learning_rate);
    fn("train.momentum", c.train.momentum);
    fn("train.epochs", c.train.epochs);
    fn("train.batch_size", c.train.batch_size);
    fn("train.seed", c.train.seed);
    fn("train.l2", c.train.l2);
    fn("classes.penguin", c.classes.external_id[0]);
    fn("classes.fish", c.classes.external_id[1]);
    fn("classes.bubble", c.classes.external_id[2]);
    fn("run.jobs", c.jobs);
}

namespace config_detail {

using Value = std::variant<std::string, std::int64_t, double, bool>;

inline std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char ch : s) {
        switch (ch) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += ch;
        }
    }
    return out + "\"";
}

/// Parses one scalar; `rest` must be empty or a comment afterwards.
inline Value parse_value(std::string_view text, std::size_t line) {
    text = detail::trim(text);
    if (text.empty()) throw ParseError(line, "missing value");
    std::string_view tail;
    Value v;
    if (text[0] == '"') {
        std::string s;
        std::size_t i = 1;
        for (; i < text.size() && text[i] != '"'; ++i) {
            if (text[i] != '\\') {
                s += text[i];
                continue;
            }
            if (++i == text.size()) break;
            switch (text[i]) {
            case '"': s += '"'; break;
            case '\\': s += '\\'; break;
            case 'n': s += '\n'; break;
            case 't': s += '\t'; break;
            default: throw ParseError(line, std::string("unknown escape \\") + text[i]);
            }
        }
        if (i >= text.size()) throw ParseError(line, "unterminated string");
        v = std::move(s);
        tail = text.substr(i + 1);
    } else {
        const auto end = text.find('#');
        const auto token = detail::trim(text.substr(0, end));
        tail = end == std::string_view::npos ? std::string_view{} : text.substr(end);
        if (token == "true" || token == "false") {
            v = token == "true";
        } else {
            std::int64_t i = 0;
            auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), i);
            if (ec == std::errc{} && p == token.data() + token.size()) {
                v = i;
            } else {
                double d = 0;
                auto [q, ec2] = std::from_chars(token.data(), token.data() + token.size(), d);
                if (ec2 != std::errc{} || q != token.data() + token.size())
                    throw ParseError(line, "cannot parse value '" + std::string(token) + "'");
                v = d;
            }
        }
    }
    tail = detail::trim(tail);
    if (!tail.empty() && tail[0] != '#') throw ParseError(line, "unexpected text after value");
    return v;
}

inline std::string type_name(const Value& v) {
    static const char* names[] = {"string", "integer", "float", "boolean"};
    return names[v.index()];
}

/// Stores `v` into a typed field; integers are accepted for float fields.
template <typename T>
void assign(T& field, const Value& v, const std::string& key) {
    auto mismatch = [&](const char* want) {
        return Error(ErrorKind::config, key + ": expected " + want + ", got " + type_name(v));
    };
    if constexpr (std::is_same_v<T, std::string>) {
        if (!std::holds_alternative<std::string>(v)) throw mismatch("string");
        field = std::get<std::string>(v);
    } else if constexpr (std::is_same_v<T, double>) {
        if (std::holds_alternative<double>(v)) field = std::get<double>(v);
        else if (std::holds_alternative<std::int64_t>(v)) field = static_cast<double>(std::get<std::int64_t>(v));
        else throw mismatch("number");
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!std::holds_alternative<bool>(v)) throw mismatch("boolean");
        field = std::get<bool>(v);
    } else {
        if (!std::holds_alternative<std::int64_t>(v)) throw mismatch("integer");
        const auto i = std::get<std::int64_t>(v);
        if constexpr (std::is_unsigned_v<T>) {
            if (i < 0) throw Error(ErrorKind::config, key + ": must be non-negative");
        } else if (i < std::numeric_limits<T>::min() || i > std::numeric_limits<T>::max()) {
            throw Error(ErrorKind::config, key + ": out of range");
        }
        field = static_cast<T>(i);
    }
}

template <typename T>
std::string render(const T& field) {
    if constexpr (std::is_same_v<T, std::string>) return quote(field);
    else if constexpr (std::is_same_v<T, double>) {
        auto s = format_number(field);
        // Keep floats recognizable as floats.
        if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
        return s;
    } else if constexpr (std::is_same_v<T, bool>) return field ? "true" : "false";
    else return std::to_string(field);
}

}  // namespace config_detail

/// Applies a config text on top of `base`. Unknown sections or keys are
/// configuration errors; syntax errors carry the line number.
inline PipelineConfig parse_config(std::string_view text, PipelineConfig base = {}) {
    std::map<std::string, std::pair<config_detail::Value, std::size_t>> entries;
    std::string section;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        const auto line = detail::trim(lines[n]);
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '[') {
            const auto close = line.find(']');
            if (close == std::string_view::npos) throw ParseError(line_no, "unterminated section header");
            const auto rest = detail::trim(line.substr(close + 1));
            if (!rest.empty() && rest[0] != '#') throw ParseError(line_no, "unexpected text after section header");
            section = std::string(detail::trim(line.substr(1, close - 1)));
            if (section.empty()) throw ParseError(line_no, "empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
        const auto key = std::string(detail::trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError(line_no, "empty key");
        const auto full = section.empty() ? key : section + "." + key;
        if (entries.contains(full)) throw ParseError(line_no, "duplicate key " + full);
        entries.emplace(full, std::pair{config_detail::parse_value(line.substr(eq + 1), line_no), line_no});
    }
    visit_fields(base, [&](const std::string& key, auto& field) {
        auto it = entries.find(key);
        if (it == entries.end()) return;
        config_detail::assign(field, it->second.first, key);
        entries.erase(it);
    });
    if (!entries.empty()) {
        const auto& [key, v] = *entries.begin();
        throw Error(ErrorKind::config, "line " + std::to_string(v.second) + ": unknown config key " + key);
    }
    return base;
}

inline std::string serialize_config(const PipelineConfig& c) {
    std::string out, section;
    visit_fields(c, [&](const std::string& key, const auto& field) {
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            out += (out.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + config_detail::render(field) + "\n";
    });
    return out;
}

/// Environment variable consulted for a key: AVR_ + upper-cased key with
/// '.' replaced by '_', e.g. AVR_TRAIN_LEARNING_RATE.
inline std::string env_name(std::string_view key) {
    std::string out = "AVR_";
    for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

/// Overrides fields from the environment. `getenv` is injectable for tests.
/// String fields take the raw value; others parse like config values.
inline void apply_env_overrides(PipelineConfig& c,
                                const std::function<const char*(const char*)>& getenv = [](const char* n) {
                                    return std::getenv(n);
                                }) {
    visit_fields(c, [&](const std::string& key, auto& field) {
        const auto name = env_name(key);
        const char* raw = getenv(name.c_str());
        if (!raw) return;
        using T = std::decay_t<decltype(field)>;
        try {
            if constexpr (std::is_same_v<T, std::string>) field = raw;
            else config_detail::assign(field, config_detail::parse_value(raw, 0), key);
        } catch (const ParseError&) {
            throw Error(ErrorKind::config, name + ": cannot parse '" + std::string(raw) + "'");
        }
    });
}

}  // namespace avr
