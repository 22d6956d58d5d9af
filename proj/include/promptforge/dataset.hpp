#ifndef PROMPTFORGE_DATASET_HPP_INCLUDED
#define PROMPTFORGE_DATASET_HPP_INCLUDED

// Dataset loaders. jsonl carries one instance per line:
//
//   {"id": "s1", "text": "...", "question": "...", "options": [...],
//    "premise": "...", "hypothesis": "...", "words": [...], "predicate": 3,
//    "pos": [...], "gold": <payload, see io.hpp>}
//
// Only "text" is always required; the task decides which of the rest it
// needs. conll_column has one word per line, whitespace-separated columns and
// a blank line between sentences. Columns are mapped to roles by index.

#include <charconv>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "eval.hpp"
#include "io.hpp"

namespace promptforge
{
    enum class Split
    {
        train,
        dev,
        test,
    };

    inline Split parse_split(std::string_view s)
    {
        if (s == "train")
            return Split::train;
        if (s == "dev")
            return Split::dev;
        if (s == "test")
            return Split::test;
        throw Error(ErrorCode::config_error, "unknown split '" + std::string(s) + "'");
    }

    enum class DataFormat
    {
        jsonl,
        conll_column,
    };

    inline DataFormat parse_data_format(std::string_view s)
    {
        if (s == "jsonl")
            return DataFormat::jsonl;
        if (s == "conll_column" || s == "conll")
            return DataFormat::conll_column;
        throw Error(ErrorCode::config_error, "unknown dataset format '" + std::string(s) + "'");
    }

    /// 0-based column indices; unset roles are absent from the file.
    struct ConllColumns
    {
        std::size_t token = 0;
        std::optional<std::size_t> tag; // BIO tag (NER)
        std::optional<std::size_t> pos;
        std::optional<std::size_t> head;
        std::optional<std::size_t> relation;
        bool strict_bio = true;
    };

    struct Dataset
    {
        TaskKind task = TaskKind::sentiment;
        Split split   = Split::test;
        std::vector<TaskInstance> instances;

        const TaskInstance* find(const std::string& id) const
        {
            for (const auto& i : instances)
                if (i.id == id)
                    return &i;
            return nullptr;
        }
    };

    namespace detail
    {
        [[noreturn]] inline void fail_at(const std::string& origin, std::size_t line, ErrorCode code,
                                         const std::string& what)
        {
            throw Error(code, origin + ":" + std::to_string(line) + ": " + what);
        }

        /// Unique ids, gold everywhere in train, task fields present.
        inline void check_dataset(const Dataset& d, const std::string& origin)
        {
            std::set<std::string> seen;
            for (const auto& inst : d.instances)
            {
                if (!seen.insert(inst.id).second)
                    throw Error(ErrorCode::format_error, origin + ": duplicate id '" + inst.id + "'");
                if (d.split == Split::train && !inst.gold)
                    throw Error(ErrorCode::format_error, origin + ": train instance '" + inst.id + "' has no gold");
            }
        }

        inline std::optional<std::string> opt_string(const json& j, const char* name)
        {
            if (!j.contains(name) || j.at(name).is_null())
                return std::nullopt;
            return as_string(j.at(name), name);
        }

        inline std::vector<std::string> string_list(const json& j, const char* name)
        {
            std::vector<std::string> out;
            if (!j.contains(name))
                return out;
            if (!j.at(name).is_array())
                schema_error(std::string(name) + " must be an array");
            for (const auto& v : j.at(name))
                out.push_back(as_string(v, name));
            return out;
        }
    } // namespace detail

    /// Parses one jsonl record. Ids default to the 1-based line number.
    inline TaskInstance instance_from_json(const TaskSpec& spec, const json& j, const std::string& default_id)
    {
        using namespace detail;
        if (!j.is_object())
            schema_error("record must be an object");
        TaskInstance inst;
        inst.id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump())
                                   : default_id;
        inst.premise    = opt_string(j, "premise");
        inst.hypothesis = opt_string(j, "hypothesis");
        if (spec.kind == TaskKind::nli && !j.contains("text") && inst.premise)
            inst.text = *inst.premise;
        else
            inst.text = as_string(field(j, "text"), "text");
        if (spec.kind == TaskKind::nli && !inst.premise)
            inst.premise = inst.text;
        inst.question = opt_string(j, "question");
        inst.options  = string_list(j, "options");
        inst.words    = string_list(j, "words");
        inst.pos_tags = string_list(j, "pos");
        if (j.contains("predicate") && !j.at("predicate").is_null())
            inst.predicate = as_index(j.at("predicate"), "predicate");
        validate_instance(spec.kind, inst);
        if (j.contains("gold") && !j.at("gold").is_null())
        {
            Prediction gold;
            gold.kind    = spec.kind;
            gold.payload = payload_from_json(spec, inst, j.at("gold"));
            inst.gold    = std::move(gold);
        }
        return inst;
    }

    inline Dataset load_jsonl(std::istream& in, const TaskSpec& spec, Split split, const std::string& origin = "<jsonl>")
    {
        Dataset d{spec.kind, split, {}};
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            if (text::trim(line).empty())
                continue;
            json j;
            try
            {
                j = json::parse(line);
            }
            catch (const json::exception& e)
            {
                detail::fail_at(origin, lineno, ErrorCode::format_error, e.what());
            }
            try
            {
                d.instances.push_back(instance_from_json(spec, j, std::to_string(lineno)));
            }
            catch (const Error& e)
            {
                detail::fail_at(origin, lineno, ErrorCode::format_error, e.what());
            }
            catch (const json::exception& e)
            {
                detail::fail_at(origin, lineno, ErrorCode::format_error, e.what());
            }
        }
        detail::check_dataset(d, origin);
        return d;
    }

    /// Sentences become instances with id "<n>" (1-based), text = the words
    /// joined by single spaces. Supports NER (tag), POS (pos) and dependency
    /// (head + relation, pos used for punctuation).
    inline Dataset load_conll_column(std::istream& in, const TaskSpec& spec, Split split, const ConllColumns& cols,
                                     const std::string& origin = "<conll>")
    {
        if (spec.kind != TaskKind::ner && spec.kind != TaskKind::pos && spec.kind != TaskKind::dependency)
            throw Error(ErrorCode::config_error,
                        std::string("conll_column does not carry ") + to_string(spec.kind) + " annotations");
        if (spec.kind == TaskKind::ner && !cols.tag)
            throw Error(ErrorCode::config_error, "conll_column NER needs a tag column");
        if (spec.kind == TaskKind::pos && !cols.pos)
            throw Error(ErrorCode::config_error, "conll_column POS needs a pos column");
        if (spec.kind == TaskKind::dependency && (!cols.head || !cols.relation))
            throw Error(ErrorCode::config_error, "conll_column dependency needs head and relation columns");

        Dataset d{spec.kind, split, {}};
        std::vector<std::vector<std::string>> rows;
        std::size_t first_line = 0, lineno = 0;

        auto column = [&](const std::vector<std::string>& row, std::size_t c, std::size_t at) -> const std::string& {
            if (c >= row.size())
                detail::fail_at(origin, at, ErrorCode::format_error,
                                "expected column " + std::to_string(c + 1) + ", line has " + std::to_string(row.size()));
            return row[c];
        };

        auto flush = [&] {
            if (rows.empty())
                return;
            TaskInstance inst;
            inst.id = std::to_string(d.instances.size() + 1);
            std::vector<std::string> tags, heads, rels;
            for (std::size_t r = 0; r < rows.size(); ++r)
            {
                auto at = first_line + r;
                inst.words.push_back(column(rows[r], cols.token, at));
                if (cols.pos)
                    inst.pos_tags.push_back(column(rows[r], *cols.pos, at));
                if (cols.tag)
                    tags.push_back(column(rows[r], *cols.tag, at));
                if (cols.head)
                    heads.push_back(column(rows[r], *cols.head, at));
                if (cols.relation)
                    rels.push_back(column(rows[r], *cols.relation, at));
            }
            for (const auto& w : inst.words)
                inst.text += (inst.text.empty() ? "" : " ") + w;

            Prediction gold;
            gold.kind = spec.kind;
            try
            {
                auto words = instance_words(inst);
                switch (spec.kind)
                {
                case TaskKind::ner: gold.payload = SpanPayload{bio_to_spans(inst.text, words, tags, cols.strict_bio)}; break;
                case TaskKind::pos: gold.payload = TagPayload{inst.pos_tags}; break;
                default:
                {
                    ArcPayload arcs;
                    for (std::size_t i = 0; i < heads.size(); ++i)
                    {
                        std::size_t h = 0;
                        auto [p, ec]  = std::from_chars(heads[i].data(), heads[i].data() + heads[i].size(), h);
                        if (ec != std::errc{} || p != heads[i].data() + heads[i].size() || h > heads.size())
                            detail::fail_at(origin, first_line + i, ErrorCode::format_error,
                                            "bad head '" + heads[i] + "'");
                        arcs.arcs.push_back({h, i + 1, rels[i]});
                    }
                    gold.payload = std::move(arcs);
                }
                }
            }
            catch (const Error& e)
            {
                if (e.code() == ErrorCode::format_error && std::string(e.what()).find(origin + ":") != std::string::npos)
                    throw;
                detail::fail_at(origin, first_line, ErrorCode::format_error, e.what());
            }
            inst.gold = std::move(gold);
            d.instances.push_back(std::move(inst));
            rows.clear();
        };

        std::string line;
        while (std::getline(in, line))
        {
            ++lineno;
            auto t = text::trim(line);
            if (t.empty())
            {
                flush();
                continue;
            }
            if (t.front() == '#')
                continue;
            if (rows.empty())
                first_line = lineno;
            std::istringstream fields{std::string(t)};
            std::vector<std::string> row;
            for (std::string f; fields >> f;)
                row.push_back(f);
            rows.push_back(std::move(row));
        }
        flush();
        detail::check_dataset(d, origin);
        return d;
    }

    inline Dataset load_dataset(const std::string& path, const TaskSpec& spec, DataFormat format, Split split,
                                const ConllColumns& cols = {})
    {
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorCode::format_error, "cannot open dataset '" + path + "'");
        return format == DataFormat::jsonl ? load_jsonl(in, spec, split, path)
                                           : load_conll_column(in, spec, split, cols, path);
    }
} // namespace promptforge

#endif // PROMPTFORGE_DATASET_HPP_INCLUDED
