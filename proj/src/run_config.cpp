#include "pvcd/run_config.hpp"

#include <set>
#include <type_traits>

namespace pvcd {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string_view kind_name(ShapeKind k) { return k == ShapeKind::rectangle ? "rectangle" : "disc"; }

std::string_view projection_name(Projection p) {
    switch (p) {
        case Projection::q: return "q";
        case Projection::k: return "k";
        case Projection::v: return "v";
        case Projection::o: return "o";
    }
    return "?";
}

std::string_view ia3_name(Ia3Target t) {
    switch (t) {
        case Ia3Target::k: return "k";
        case Ia3Target::v: return "v";
        case Ia3Target::mlp: return "mlp";
    }
    return "?";
}

// Reads the keys of one JSON object and rejects any it does not recognise.
class Section {
public:
    Section(const json& parent, std::string name) : name_(std::move(name)) {
        if (!parent.contains(name_)) return;
        obj_ = &parent.at(name_);
        if (!obj_->is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
    }

    template <class U>
        requires std::is_unsigned_v<U>
    void get(const char* key, U& out) {
        if (const json* v = take(key)) {
            if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<long long>() < 0)) {
                fail(key, "a non-negative integer");
            }
            out = v->get<U>();
        }
    }
    void get(const char* key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) fail(key, "a number");
            out = v->get<double>();
        }
    }
    void get(const char* key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) fail(key, "a boolean");
            out = v->get<bool>();
        }
    }
    void get(const char* key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) fail(key, "a string");
            out = v->get<std::string>();
        }
    }
    template <class Enum, class Parse>
    void get_set(const char* key, std::set<Enum>& out, Parse parse) {
        if (const json* v = take(key)) {
            if (!v->is_array()) fail(key, "an array of names");
            out.clear();
            for (const auto& item : *v) {
                if (!item.is_string()) fail(key, "an array of names");
                out.insert(parse(item.get<std::string>()));
            }
        }
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& [key, value] : obj_->items()) {
            if (!seen_.contains(key)) throw ConfigError("config: unknown key '" + name_ + "." + key + "'");
        }
    }

private:
    const json* take(const char* key) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key)) return nullptr;
        return &obj_->at(key);
    }
    [[noreturn]] void fail(const char* key, const char* expected) const {
        throw ConfigError("config: '" + name_ + "." + key + "' must be " + expected);
    }

    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> seen_;
};

Projection parse_projection(const std::string& s) {
    if (s == "q") return Projection::q;
    if (s == "k") return Projection::k;
    if (s == "v") return Projection::v;
    if (s == "o") return Projection::o;
    throw ConfigError("config: unknown LoRA target '" + s + "' (expected q, k, v or o)");
}

Ia3Target parse_ia3(const std::string& s) {
    if (s == "k") return Ia3Target::k;
    if (s == "v") return Ia3Target::v;
    if (s == "mlp") return Ia3Target::mlp;
    throw ConfigError("config: unknown IA3 target '" + s + "' (expected k, v or mlp)");
}

ShapeKind parse_kind(const std::string& s) {
    if (s == "rectangle") return ShapeKind::rectangle;
    if (s == "disc") return ShapeKind::disc;
    throw ConfigError("config: unknown shape kind '" + s + "' (expected rectangle or disc)");
}

template <class Enum, class Name>
json names(const std::set<Enum>& set, Name name) {
    json arr = json::array();
    for (Enum e : set) arr.push_back(std::string(name(e)));
    return arr;
}

}  // namespace

void RunConfig::validate() const {
    try {
        model.validate();
        train.validate();
        synth.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (train.crop_size > model.vit.image_size) {
        throw ConfigError("train.crop_size exceeds vit.image_size");
    }
    if (train.crop_size != 0 && train.crop_size != model.vit.image_size) {
        throw ConfigError("train.crop_size must equal vit.image_size (the position embedding fixes the input size)");
    }
}

ojson to_json(const RunConfig& c) {
    ojson j;
    const auto& v = c.model.vit;
    j["vit"] = {{"image_size", v.image_size}, {"patch_size", v.patch_size}, {"depth", v.depth},
                {"dim", v.dim},               {"heads", v.heads},           {"mlp_ratio", v.mlp_ratio}};
    const auto& p = c.model.peft;
    j["peft"] = {{"method", std::string(to_string(p.method))},
                 {"r", p.r},
                 {"s", p.s},
                 {"rank", p.rank},
                 {"lora_targets", names(p.lora_targets, projection_name)},
                 {"ia3_targets", names(p.ia3_targets, ia3_name)},
                 {"prefix_count", p.prefix_count}};
    j["model"] = {{"frames", c.model.frames}, {"seed", c.model.seed}, {"backbone_weights", c.backbone_weights}};
    const auto& t = c.train;
    j["train"] = {{"batch_size", t.batch_size}, {"epochs", t.epochs},       {"lr", t.lr},
                  {"weight_decay", t.weight_decay}, {"beta1", t.beta1},     {"beta2", t.beta2},
                  {"eps", t.eps},               {"crop_size", t.crop_size}, {"flips", t.flips},
                  {"val_split", t.val_split},   {"seed", t.seed},           {"threads", t.threads}};
    j["data"] = {{"root", c.data.root}, {"train_split", c.data.train_split}, {"eval_split", c.data.eval_split}};
    const auto& s = c.synth;
    j["synth"] = {{"count", s.count},
                  {"test_count", s.test_count},
                  {"image_size", s.image_size},
                  {"kinds", names(s.kinds, kind_name)},
                  {"min_shapes", s.min_shapes},
                  {"max_shapes", s.max_shapes},
                  {"min_size", s.min_size},
                  {"max_size", s.max_size},
                  {"change_probability", s.change_probability},
                  {"recolor_probability", s.recolor_probability},
                  {"noise", s.noise},
                  {"seed", s.seed}};
    j["checkpoint"] = c.checkpoint;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    static const std::set<std::string> sections{"vit", "peft", "model", "train", "data", "synth", "checkpoint"};
    for (const auto& [key, value] : j.items()) {
        if (!sections.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
    }
    RunConfig c;

    Section vit(j, "vit");
    auto& v = c.model.vit;
    vit.get("image_size", v.image_size);
    vit.get("patch_size", v.patch_size);
    vit.get("depth", v.depth);
    vit.get("dim", v.dim);
    vit.get("heads", v.heads);
    vit.get("mlp_ratio", v.mlp_ratio);
    vit.finish();

    Section peft(j, "peft");
    auto& p = c.model.peft;
    std::string method(to_string(p.method));
    peft.get("method", method);
    try {
        p.method = parse_peft_method(method);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    peft.get("r", p.r);
    peft.get("s", p.s);
    peft.get("rank", p.rank);
    peft.get_set("lora_targets", p.lora_targets, parse_projection);
    peft.get_set("ia3_targets", p.ia3_targets, parse_ia3);
    peft.get("prefix_count", p.prefix_count);
    peft.finish();

    Section model(j, "model");
    model.get("frames", c.model.frames);
    model.get("seed", c.model.seed);
    model.get("backbone_weights", c.backbone_weights);
    model.finish();

    Section train(j, "train");
    auto& t = c.train;
    train.get("batch_size", t.batch_size);
    train.get("epochs", t.epochs);
    train.get("lr", t.lr);
    train.get("weight_decay", t.weight_decay);
    train.get("beta1", t.beta1);
    train.get("beta2", t.beta2);
    train.get("eps", t.eps);
    train.get("crop_size", t.crop_size);
    train.get("flips", t.flips);
    train.get("val_split", t.val_split);
    train.get("seed", t.seed);
    train.get("threads", t.threads);
    train.finish();

    Section data(j, "data");
    data.get("root", c.data.root);
    data.get("train_split", c.data.train_split);
    data.get("eval_split", c.data.eval_split);
    data.finish();

    Section synth(j, "synth");
    auto& s = c.synth;
    synth.get("count", s.count);
    synth.get("test_count", s.test_count);
    synth.get("image_size", s.image_size);
    synth.get_set("kinds", s.kinds, parse_kind);
    synth.get("min_shapes", s.min_shapes);
    synth.get("max_shapes", s.max_shapes);
    synth.get("min_size", s.min_size);
    synth.get("max_size", s.max_size);
    synth.get("change_probability", s.change_probability);
    synth.get("recolor_probability", s.recolor_probability);
    synth.get("noise", s.noise);
    synth.get("seed", s.seed);
    synth.finish();

    if (j.contains("checkpoint")) {
        if (!j.at("checkpoint").is_string()) throw ConfigError("config: 'checkpoint' must be a string");
        c.checkpoint = j.at("checkpoint").get<std::string>();
    }
    return c;
}

void apply_override(json& j, std::string_view dotted_key, std::string_view value) {
    json* node = &j;
    std::string path;
    std::size_t start = 0;
    while (start <= dotted_key.size()) {
        const std::size_t dot = dotted_key.find('.', start);
        const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.npos : dot - start));
        path += (path.empty() ? "" : ".") + part;
        if (part.empty() || !node->is_object() || !node->contains(part)) {
            throw ConfigError("unknown config key '" + std::string(dotted_key) + "'");
        }
        node = &(*node)[part];
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("'" + path + "' is a section, not a value");
    if (node->is_string()) {
        *node = std::string(value);
        return;
    }
    json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) {
        // Bare words in a list, e.g. --peft.lora_targets=q,v
        if (node->is_array()) {
            parsed = json::array();
            std::size_t s = 0;
            while (s <= value.size()) {
                const std::size_t comma = value.find(',', s);
                parsed.push_back(std::string(value.substr(s, comma == value.npos ? value.npos : comma - s)));
                if (comma == value.npos) break;
                s = comma + 1;
            }
        } else {
            parsed = std::string(value);
        }
    }
    *node = std::move(parsed);
}

ojson to_json(const MetricReport& r) {
    return {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"tn", r.tn}, {"f1", r.f1}, {"iou", r.iou}, {"oa", r.oa}};
}

ViTConfig vit_preset(std::string_view name, std::size_t image_size) {
    if (name == "tiny") return ViTConfig::tiny(image_size);
    if (name == "small") return ViTConfig::small(image_size);
    throw ConfigError("unknown ViT preset '" + std::string(name) + "' (expected tiny or small)");
}

}  // namespace pvcd
