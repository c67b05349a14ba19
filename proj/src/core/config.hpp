#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "common.hpp"
#include "model.hpp"
#include "objective.hpp"

namespace digpt {

enum class KeyType : uint8_t { integer, real, flag, text, choice };
enum class Provenance : uint8_t { fallback, file, override_ };

const char* provenance_name(Provenance p);

struct KeySpec {
    std::string name;
    KeyType type = KeyType::text;
    std::string def;
    std::string doc;
    std::vector<std::string> choices;  // for KeyType::choice
};

// Flat typed key/value store. Every key is declared once in the registry
// with its default and doc line; anything else is rejected. Help text and
// documented defaults both come from the same registry.
class Config {
public:
    Config();

    static const std::vector<KeySpec>& registry();
    static const std::vector<std::string>& preset_names();

    void load_file(const std::string& path);
    void apply_preset(const std::string& name);

    // Override-level set ("--override key=value"); wins over file values.
    void set_override(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    const std::string& get_raw(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_float(const std::string& key) const;
    bool get_flag(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    Provenance provenance(const std::string& key) const;

    // Cross-key rules; throws ConfigError naming the offending keys.
    void validate() const;

    // Canonical sorted key=value dump and its hash (used for run provenance).
    std::string snapshot() const;
    uint64_t hash() const;

    // Assembled sub-configs. teacher_dim is resolved later by the trainer
    // once the provider is known; 0 is a placeholder.
    ModelConfig model_config() const;
    LossSpec loss_spec() const;

    // Parse + merge in canonical precedence: defaults, preset, file, overrides.
    static Config assemble(const std::string& file_path, const std::string& preset,
                           const std::vector<std::string>& overrides);

private:
    void set_value(const std::string& key, const std::string& value, Provenance prov);
    const KeySpec& spec_for(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::map<std::string, Provenance> provenance_;
};

}  // namespace digpt
