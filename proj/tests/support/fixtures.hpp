#ifndef PROMPTFORGE_TEST_FIXTURES_HPP_INCLUDED
#define PROMPTFORGE_TEST_FIXTURES_HPP_INCLUDED

// Synthetic, seeded fixtures for every task plus backends that answer from the
// gold annotation. Gold is built from recorded offsets while the text is
// assembled, never by running library decoders.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <promptforge/promptforge.hpp>

namespace pf_test
{
    using namespace promptforge;

    /// Assembles space-separated text and records code-point offsets.
    class TextBuilder
    {
    public:
        Span add(const std::string& piece, const std::string& label = "")
        {
            if (!text_.empty())
                text_ += ' ';
            auto start = text_.size();
            text_ += piece;
            return Span{start, text_.size(), label, piece};
        }
        const std::string& text() const noexcept
        {
            return text_;
        }

    private:
        std::string text_; // ASCII only, so bytes are code points
    };

    struct Fixture
    {
        TaskSpec spec;
        std::vector<TaskInstance> train;
        std::vector<TaskInstance> test;
    };

    inline Prediction gold_prediction(TaskKind kind, Payload p)
    {
        Prediction g;
        g.kind    = kind;
        g.payload = std::move(p);
        return g;
    }

    template <typename T>
    const T& pick(std::mt19937_64& rng, const std::vector<T>& v)
    {
        return v[rng() % v.size()];
    }

    /// k distinct elements in random order.
    template <typename T>
    std::vector<T> pick_distinct(std::mt19937_64& rng, std::vector<T> v, std::size_t k)
    {
        for (std::size_t i = 0; i < k; ++i)
            std::swap(v[i], v[i + rng() % (v.size() - i)]);
        v.resize(k);
        return v;
    }

    namespace vocab
    {
        inline const std::vector<std::string> persons{"Alice Moreno", "Bruno Lind",   "Chen Wei",    "Dana Okafor",
                                                      "Elif Sahin",   "Farid Haddad", "Greta Holm",  "Hugo Ramos",
                                                      "Ines Duarte",  "Jonas Berg",   "Kenji Sato",  "Lena Fischer"};
        inline const std::vector<std::string> cities{"Lisbon", "Oslo", "Nairobi", "Quito",  "Hanoi",  "Dublin",
                                                     "Tunis",  "Lima", "Riga",    "Perth",  "Bergen", "Kyoto"};
        inline const std::vector<std::string> orgs{"Norvik Labs",    "Tessera Group",    "Alder Bank",
                                                   "Kestrel Air",    "Vantor Systems",   "Brightwell Foods",
                                                   "Corvid Media",   "Halden Steel"};
        inline const std::vector<std::string> nouns{"fox", "hen", "dog", "cat", "owl", "goat", "crow", "mule"};
        inline const std::vector<std::string> adjectives{"quick", "lazy", "small", "brown", "old", "young"};
        inline const std::vector<std::string> past_verbs{"chased", "watched", "followed", "ignored", "found"};
    } // namespace vocab

    //=== per-task fixtures ===//

    inline TaskInstance sentiment_instance(std::mt19937_64& rng, const std::string& id)
    {
        static const std::vector<std::string> good{"wonderful", "delightful", "superb", "charming"};
        static const std::vector<std::string> bad{"dreadful", "awful", "boring", "clumsy"};
        static const std::vector<std::string> things{"film", "meal", "concert", "novel", "hotel", "play"};
        bool positive = rng() % 2 == 0;
        TaskInstance t;
        t.id   = id;
        t.text = "The " + pick(rng, things) + " was " + pick(rng, positive ? good : bad) + " .";
        t.gold = gold_prediction(TaskKind::sentiment, ClassPayload{positive ? 0u : 1u});
        return t;
    }

    inline TaskInstance commonsense_instance(std::mt19937_64& rng, const std::string& id)
    {
        static const std::vector<std::string> items{"pebble", "feather", "waterfall", "candle", "ladder",
                                                    "compass", "blanket", "kettle",    "lantern", "anchor"};
        TaskInstance t;
        t.id      = id;
        t.options = pick_distinct(rng, items, 4);
        auto gold = rng() % 4;
        t.text    = "Which object best fits the riddle number " + std::to_string(rng() % 1000) + " ?";
        t.gold    = gold_prediction(TaskKind::commonsense, ClassPayload{gold});
        return t;
    }

    inline TaskInstance nli_instance(std::mt19937_64& rng, const std::string& id)
    {
        auto who  = pick(rng, vocab::persons);
        auto rel  = rng() % 3;
        TaskInstance t;
        t.id      = id;
        t.premise = who + " is sleeping on the couch in " + pick(rng, vocab::cities) + " .";
        t.text    = *t.premise;
        static const char* hyp[] = {" is resting .", " is running a marathon .", " owns a red car ."};
        t.hypothesis = who + hyp[rel];
        t.gold       = gold_prediction(TaskKind::nli, ClassPayload{rel});
        return t;
    }

    inline TaskInstance qa_instance(std::mt19937_64& rng, const std::string& id)
    {
        static const std::vector<std::pair<std::string, std::string>> capitals{
            {"Seoul", "Korea"}, {"Tokyo", "Japan"},   {"Paris", "France"}, {"Lima", "Peru"},
            {"Oslo", "Norway"}, {"Hanoi", "Vietnam"}, {"Rome", "Italy"},   {"Cairo", "Egypt"}};
        auto chosen = pick_distinct(rng, capitals, 4);
        TaskInstance t;
        t.id = id;
        for (std::size_t i = 0; i < 3; ++i)
            t.text += (i ? " " : "") + chosen[i].first + " is the capital of " + chosen[i].second + ".";
        bool answerable = rng() % 5 != 0;
        auto k          = rng() % 3;
        t.question      = "What is the capital of " + (answerable ? chosen[k].second : chosen[3].second) + "?";
        QaPayload p;
        if (answerable)
            p.answer = QaAnswer{k + 1, chosen[k].first};
        t.gold = gold_prediction(TaskKind::qa, p);
        return t;
    }

    inline TaskInstance ner_instance(std::mt19937_64& rng, const std::string& id)
    {
        auto per = pick(rng, vocab::persons);
        auto org = pick(rng, vocab::orgs);
        auto loc = pick(rng, vocab::cities);
        TextBuilder b;
        std::vector<Span> spans;
        switch (rng() % 5)
        {
        case 0:
            spans.push_back(b.add(per, "PER"));
            b.add("visited");
            spans.push_back(b.add(loc, "LOC"));
            b.add("last spring .");
            break;
        case 1:
            spans.push_back(b.add(per, "PER"));
            b.add("joined");
            spans.push_back(b.add(org, "ORG"));
            b.add("after leaving");
            spans.push_back(b.add(loc, "LOC"));
            b.add(".");
            break;
        case 2: b.add("The weather was mild all week ."); break;
        case 3:
            spans.push_back(b.add(org, "ORG"));
            b.add("opened an office in");
            spans.push_back(b.add(loc, "LOC"));
            b.add(".");
            break;
        default:
            b.add("Reports from");
            spans.push_back(b.add(loc, "LOC"));
            b.add("praised");
            spans.push_back(b.add(per, "PER"));
            b.add("and the");
            spans.push_back(b.add("Olympics", "MISC"));
            b.add(".");
        }
        TaskInstance t;
        t.id   = id;
        t.text = b.text();
        std::sort(spans.begin(), spans.end());
        t.gold = gold_prediction(TaskKind::ner, SpanPayload{spans});
        return t;
    }

    inline TaskInstance re_instance(std::mt19937_64& rng, const std::string& id)
    {
        auto per = pick(rng, vocab::persons);
        auto org = pick(rng, vocab::orgs);
        auto loc = pick(rng, vocab::cities);
        TextBuilder b;
        RelationPayload p;
        switch (rng() % 3)
        {
        case 0: // PER(0) ORG(1) LOC(2)
            b.add("In 2002 ,");
            p.entities.push_back(b.add(per, "PER"));
            b.add("founded");
            p.entities.push_back(b.add(org, "ORG"));
            b.add("in");
            p.entities.push_back(b.add(loc, "LOC"));
            b.add(".");
            p.triples = {{0, 1, "founded"}, {1, 2, "located_in"}};
            break;
        case 1: // ORG(0) PER(1)
            p.entities.push_back(b.add(org, "ORG"));
            b.add("was founded by");
            p.entities.push_back(b.add(per, "PER"));
            b.add(".");
            p.triples = {{1, 0, "founded"}};
            break;
        default: // PER(0) LOC(1), no relation
            p.entities.push_back(b.add(per, "PER"));
            b.add("met reporters in");
            p.entities.push_back(b.add(loc, "LOC"));
            b.add(".");
        }
        std::sort(p.triples.begin(), p.triples.end());
        TaskInstance t;
        t.id   = id;
        t.text = b.text();
        t.gold = gold_prediction(TaskKind::relation_extraction, p);
        return t;
    }

    inline TaskInstance ee_instance(std::mt19937_64& rng, const std::string& id)
    {
        static const std::vector<std::string> attackers{"A protester", "The gunman", "A rioter", "The suspect"};
        static const std::vector<std::string> triggers{"stabbed", "shot", "struck", "attacked"};
        static const std::vector<std::string> targets{"an officer", "a guard", "the driver", "a clerk"};
        static const std::vector<std::string> instruments{"a knife", "a rifle", "a bat", "a pipe"};
        TextBuilder b;
        EventPayload p;
        auto attack = [&](bool with_instrument) {
            Event e;
            e.type                   = "attack";
            e.arguments["attacker"]  = b.add(pick(rng, attackers), "attacker");
            e.trigger                = b.add(pick(rng, triggers), "attack");
            e.arguments["target"]    = b.add(pick(rng, targets), "target");
            if (with_instrument)
            {
                b.add("with");
                e.arguments["instrument"] = b.add(pick(rng, instruments), "instrument");
            }
            return e;
        };
        auto transport = [&] {
            Event e;
            e.type                 = "transport";
            e.arguments["person"]  = b.add(pick(rng, vocab::persons), "person");
            e.trigger              = b.add("traveled", "transport");
            b.add("to");
            e.arguments["destination"] = b.add(pick(rng, vocab::cities), "destination");
            return e;
        };
        switch (rng() % 4)
        {
        case 0: p.events.push_back(attack(true)); break;
        case 1: p.events.push_back(attack(false)); break;
        case 2: p.events.push_back(transport()); break;
        default: b.add("The market was quiet on Sunday");
        }
        b.add(".");
        TaskInstance t;
        t.id   = id;
        t.text = b.text();
        t.gold = gold_prediction(TaskKind::event_extraction, p);
        return t;
    }

    inline TaskInstance pos_instance(std::mt19937_64& rng, const std::string& id)
    {
        static const std::vector<std::vector<std::pair<std::string, std::vector<std::string>>>> patterns{
            {{"DT", {"The", "A"}},
             {"JJ", vocab::adjectives},
             {"NN", vocab::nouns},
             {"VBD", vocab::past_verbs},
             {"DT", {"the", "a"}},
             {"NN", vocab::nouns},
             {".", {"."}}},
            {{"NNP", {"Vinken", "Alice", "Bruno", "Kenji"}},
             {"VBZ", {"is", "seems"}},
             {"RB", {"very", "quite"}},
             {"JJ", vocab::adjectives},
             {".", {"."}}},
            {{"PRP", {"She", "He", "They"}},
             {"VBD", {"sat", "slept", "waited"}},
             {"IN", {"on", "under", "near"}},
             {"DT", {"the"}},
             {"NN", {"bench", "tree", "bridge"}},
             {".", {"."}}},
            {{"CD", {"Three", "Five", "Nine"}}, {"NNS", {"dogs", "birds", "cars"}}, {"VBD", {"barked", "waited"}}, {",", {","}},
             {"CC", {"and"}}, {"PRP", {"we"}}, {"VBD", {"left"}}, {".", {"."}}},
        };
        const auto& pat = pick(rng, patterns);
        TextBuilder b;
        TagPayload p;
        for (const auto& [tag, words] : pat)
        {
            b.add(pick(rng, words));
            p.tags.push_back(tag);
        }
        TaskInstance t;
        t.id   = id;
        t.text = b.text();
        t.gold = gold_prediction(TaskKind::pos, p);
        return t;
    }

    inline TaskInstance dependency_instance(std::mt19937_64& rng, const std::string& id)
    {
        struct W
        {
            std::string word, pos;
            std::size_t head;
            std::string rel;
        };
        std::vector<W> ws;
        switch (rng() % 3)
        {
        case 0:
            ws = {{"The", "DT", 3, "det"},
                  {pick(rng, vocab::adjectives), "JJ", 3, "amod"},
                  {pick(rng, vocab::nouns), "NN", 4, "nsubj"},
                  {pick(rng, vocab::past_verbs), "VBD", 0, "root"},
                  {"the", "DT", 6, "det"},
                  {pick(rng, vocab::nouns), "NN", 4, "dobj"},
                  {".", ".", 4, "punct"}};
            break;
        case 1:
            ws = {{pick(rng, std::vector<std::string>{"Alice", "Bruno", "Kenji"}), "NNP", 2, "nsubj"},
                  {pick(rng, std::vector<std::string>{"lived", "worked", "studied"}), "VBD", 0, "root"},
                  {"in", "IN", 2, "prep"},
                  {pick(rng, vocab::cities), "NNP", 3, "pobj"},
                  {".", ".", 2, "punct"}};
            break;
        default:
            ws = {{"I", "PRP", 2, "nsubj"},
                  {"prefer", "VBP", 0, "root"},
                  {"the", "DT", 5, "det"},
                  {pick(rng, std::vector<std::string>{"morning", "evening", "late"}), "NN", 5, "nn"},
                  {"flight", "NN", 2, "dobj"},
                  {"to", "TO", 5, "prep"},
                  {pick(rng, vocab::cities), "NNP", 6, "pobj"}};
        }
        TextBuilder b;
        ArcPayload p;
        TaskInstance t;
        for (std::size_t i = 0; i < ws.size(); ++i)
        {
            b.add(ws[i].word);
            t.pos_tags.push_back(ws[i].pos);
            p.arcs.push_back({ws[i].head, i + 1, ws[i].rel});
        }
        t.id   = id;
        t.text = b.text();
        t.gold = gold_prediction(TaskKind::dependency, p);
        return t;
    }

    inline TaskInstance srl_instance(std::mt19937_64& rng, const std::string& id)
    {
        TextBuilder b;
        SrlPayload p;
        TaskInstance t;
        std::string verb;
        if (rng() % 2 == 0)
        {
            static const std::vector<std::string> things{"stock", "price", "index", "bond"};
            verb              = pick(rng, std::vector<std::string>{"beaten", "pushed", "dragged"});
            p.arguments["A1"] = b.add("The " + pick(rng, things), "A1");
            b.add("has been");
            b.add(verb);
            b.add("down");
            p.arguments["TMP"] = b.add("for two days", "TMP");
            b.add(".");
            t.predicate = 4;
        }
        else
        {
            verb              = pick(rng, std::vector<std::string>{"pushed", "pulled", "moved"});
            p.arguments["A0"] = b.add(pick(rng, std::vector<std::string>{"Alice", "Bruno", "Kenji"}), "A0");
            b.add(verb);
            p.arguments["A1"]  = b.add("the " + pick(rng, std::vector<std::string>{"cart", "crate", "sofa"}), "A1");
            p.arguments["TMP"] = b.add("yesterday", "TMP");
            b.add(".");
            t.predicate = 1;
        }
        t.options = {verb + ".01", verb + ".02", verb + ".03"};
        p.sense   = rng() % 3;
        t.id      = id;
        t.text    = b.text();
        t.gold    = gold_prediction(TaskKind::srl, p);
        return t;
    }

    inline TaskSpec fixture_spec(TaskKind kind)
    {
        auto s = TaskSpec::defaults(kind);
        switch (kind)
        {
        case TaskKind::relation_extraction: s.relations = {"founded", "located_in"}; break;
        case TaskKind::event_extraction:
            s.labels      = {"attack", "transport"};
            s.event_roles = {{"attack", {"attacker", "target", "instrument"}}, {"transport", {"person", "destination"}}};
            break;
        case TaskKind::dependency:
            s.labels = {"nsubj", "dobj", "det", "prep", "pobj", "amod", "nn", "punct"};
            break;
        default: break;
        }
        return s;
    }

    /// `n_test` test and `n_train` train instances; ids "te-<i>" / "tr-<i>".
    inline Fixture make_fixture(TaskKind kind, std::size_t n_test = 20, std::size_t n_train = 12,
                                std::uint64_t seed = 7)
    {
        std::mt19937_64 rng(seed * 1000003u + static_cast<std::uint64_t>(kind));
        auto gen = [&](const std::string& id) {
            switch (kind)
            {
            case TaskKind::sentiment: return sentiment_instance(rng, id);
            case TaskKind::commonsense: return commonsense_instance(rng, id);
            case TaskKind::nli: return nli_instance(rng, id);
            case TaskKind::qa: return qa_instance(rng, id);
            case TaskKind::ner: return ner_instance(rng, id);
            case TaskKind::relation_extraction: return re_instance(rng, id);
            case TaskKind::event_extraction: return ee_instance(rng, id);
            case TaskKind::pos: return pos_instance(rng, id);
            case TaskKind::dependency: return dependency_instance(rng, id);
            case TaskKind::srl: return srl_instance(rng, id);
            }
            return sentiment_instance(rng, id);
        };
        Fixture f;
        f.spec = fixture_spec(kind);
        for (std::size_t i = 0; i < n_train; ++i)
            f.train.push_back(gen("tr-" + std::to_string(i)));
        for (std::size_t i = 0; i < n_test; ++i)
            f.test.push_back(gen("te-" + std::to_string(i)));
        return f;
    }

    //=== backends ===//

    struct ParsedTag
    {
        std::string instance; // without any "#para" suffix
        std::string step;
        std::string unit;
        std::size_t prompt = 0;
    };

    /// "<step>/<unit...>/p<i>"; units may themselves contain '/'.
    inline ParsedTag parse_tag(const RequestTag& tag)
    {
        ParsedTag p;
        p.instance = tag.instance_id.substr(0, tag.instance_id.find("#para"));
        const auto& id = tag.prompt_id;
        auto first     = id.find('/');
        auto last      = id.rfind('/');
        p.step         = id.substr(0, first);
        if (first == std::string::npos)
            return p;
        auto tail = id.substr(last + 1);
        if (tail.size() < 2 || tail[0] != 'p') // e.g. "paraphrase/2"
        {
            p.unit = id.substr(first + 1);
            return p;
        }
        p.unit   = first == last ? "" : id.substr(first + 1, last - first - 1);
        p.prompt = std::stoul(tail.substr(1));
        return p;
    }

    /// Answers every step in the task's output grammar from the gold of the
    /// instance named in the request tag. Verification is always "yes".
    class OracleBackend : public Backend
    {
    public:
        OracleBackend(const Fixture& f) : spec_(f.spec)
        {
            for (const auto* set : {&f.train, &f.test})
                for (const auto& t : *set)
                    by_id_[t.id] = &t;
        }

        std::string id() const override
        {
            return "oracle";
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            ++calls_;
            return {answer(parse_tag(req.tag)), id(), false, {}};
        }

        std::size_t calls() const noexcept
        {
            return calls_;
        }

        std::string answer(const ParsedTag& t) const
        {
            const auto& inst = *by_id_.at(t.instance);
            const auto& p    = inst.gold->payload;
            const auto& g    = spec_.markers;
            auto yes_no      = [](bool b) { return std::string(b ? "yes" : "no"); };
            if (t.step == step::verify)
                return "yes";
            if (t.step == step::paraphrase)
                return "In other words : " + inst.text;
            if (t.step == step::classify)
            {
                auto label = spec_.labels.at(std::get<ClassPayload>(p).index);
                for (const auto& [w, l] : spec_.label_words)
                    if (l == label)
                        return w;
            }
            if (t.step == step::choice)
            {
                auto i = std::get<ClassPayload>(p).index;
                return "(" + std::string(1, static_cast<char>('A' + i)) + ") " + inst.options.at(i);
            }
            if (t.step == step::nli)
                return yes_no(spec_.labels.at(std::get<ClassPayload>(p).index) == t.unit);
            if (t.step == step::qa)
            {
                const auto& a = std::get<QaPayload>(p).answer;
                return a ? "(" + std::to_string(a->sentence) + ") " + a->text : "unanswerable";
            }
            if (t.step == step::ner || t.step == step::re_entity)
            {
                const auto& spans =
                    t.step == step::ner ? std::get<SpanPayload>(p).spans : std::get<RelationPayload>(p).entities;
                std::vector<Span> mine;
                for (const auto& s : spans)
                    if (s.label == t.unit)
                        mine.push_back(s);
                return mark(inst.text, mine, g);
            }
            if (t.step == step::re_relation)
            {
                // unit "i-j/relation"
                auto dash = t.unit.find('-'), slash = t.unit.find('/');
                Triple want{std::stoul(t.unit.substr(0, dash)), std::stoul(t.unit.substr(dash + 1, slash - dash - 1)),
                            t.unit.substr(slash + 1)};
                const auto& tr = std::get<RelationPayload>(p).triples;
                return std::find(tr.begin(), tr.end(), want) != tr.end() ? "Yes" : "No";
            }
            if (t.step == step::ee_trigger)
            {
                for (const auto& e : std::get<EventPayload>(p).events)
                    if (e.type == t.unit)
                        return e.trigger.surface;
                return "null";
            }
            if (t.step == step::ee_argument)
            {
                auto slash = t.unit.find('/');
                auto type = t.unit.substr(0, slash), role = t.unit.substr(slash + 1);
                for (const auto& e : std::get<EventPayload>(p).events)
                    if (e.type == type)
                    {
                        auto it = e.arguments.find(role);
                        return it == e.arguments.end() ? "null" : it->second.surface;
                    }
                return "null";
            }
            if (t.step == step::pos)
            {
                auto w   = std::stoul(t.unit.substr(1));
                auto tag = std::get<TagPayload>(p).tags.at(w - 1);
                auto idx = std::find(spec_.labels.begin(), spec_.labels.end(), tag) - spec_.labels.begin();
                return std::to_string(idx + 1) + ". " + tag + " " + spec_.describe(tag);
            }
            if (t.step == step::dep_head)
            {
                auto h     = std::stoul(t.unit.substr(1));
                auto words = word_offsets(inst.text);
                std::vector<Span> deps;
                for (const auto& a : std::get<ArcPayload>(p).arcs)
                    if (a.head == h)
                        deps.push_back(words.at(a.dependent - 1));
                return mark(inst.text, deps, g);
            }
            if (t.step == step::dep_relation)
            {
                // unit "h-d/relation"
                auto dash = t.unit.find('-'), slash = t.unit.find('/');
                auto h = std::stoul(t.unit.substr(0, dash));
                auto d = std::stoul(t.unit.substr(dash + 1, slash - dash - 1));
                auto r = t.unit.substr(slash + 1);
                for (const auto& a : std::get<ArcPayload>(p).arcs)
                    if (a.dependent == d)
                        return a.head == h && a.relation == r ? "Yes" : "No";
                return "No";
            }
            if (t.step == step::srl_sense)
                return yes_no(std::get<SrlPayload>(p).sense + 1 == std::stoul(t.unit.substr(1)));
            if (t.step == step::srl_argument)
            {
                const auto& args = std::get<SrlPayload>(p).arguments;
                auto it          = args.find(t.unit);
                return it == args.end() ? "null" : it->second.surface;
            }
            return "unsupported step " + t.step;
        }

        /// Words as whitespace-separated runs; fixtures put spaces around
        /// every token, so this matches the library tokenizer there.
        static std::vector<Span> word_offsets(const std::string& text)
        {
            std::vector<Span> out;
            std::size_t i = 0;
            while (i < text.size())
            {
                if (text[i] == ' ')
                {
                    ++i;
                    continue;
                }
                auto j = text.find(' ', i);
                if (j == std::string::npos)
                    j = text.size();
                out.push_back({i, j, "", text.substr(i, j - i)});
                i = j;
            }
            return out;
        }

        /// Independent marker rendering: insert markers right to left.
        static std::string mark(std::string text, std::vector<Span> spans, const MarkerGrammar& g)
        {
            std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.start > b.start; });
            for (const auto& s : spans)
            {
                text.insert(s.end, g.close);
                text.insert(s.start, g.open);
            }
            return text;
        }

    private:
        TaskSpec spec_;
        std::map<std::string, const TaskInstance*> by_id_;
        std::atomic<std::size_t> calls_{0};
    };

    inline std::uint64_t fnv(std::string_view s)
    {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s)
        {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    /// Deterministic uniform draw in [0, 1) keyed by the request tag, so the
    /// corrupted set for p is a subset of the one for any larger p.
    inline double tag_draw(const RequestTag& tag, std::string_view salt = "")
    {
        auto h = fnv(tag.str() + std::string(salt));
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdull;
        h ^= h >> 33;
        return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53);
    }

    /// The oracle with a fraction p of responses replaced by wrong ones:
    /// the other label for sentiment, an extra marked word for span steps.
    class CorruptingBackend : public Backend
    {
    public:
        CorruptingBackend(const Fixture& f, double p) : oracle_(f), spec_(f.spec), p_(p)
        {
            for (const auto& t : f.test)
                text_[t.id] = t.text;
        }

        std::string id() const override
        {
            return "corrupt";
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            auto t   = parse_tag(req.tag);
            auto out = oracle_.answer(t);
            if (tag_draw(req.tag) < p_)
            {
                if (t.step == step::classify)
                    out = out == spec_.label_words[0].first ? spec_.label_words[1].first : spec_.label_words[0].first;
                else if (t.step == step::ner)
                    out = spurious(text_.at(t.instance), t.unit, req.tag);
            }
            return {out, id(), false, {}};
        }

    private:
        /// Gold marks of the unit's label plus one extra marked word.
        std::string spurious(const std::string& text, const std::string& label, const RequestTag& tag) const
        {
            auto words = OracleBackend::word_offsets(text);
            ParsedTag pt{tag.instance_id, step::ner, label, 0};
            auto gold_out = oracle_.answer(pt);
            auto gold     = marker_decode(text, gold_out, spec_.markers, label).payload.value();
            std::vector<Span> extra;
            for (const auto& w : words)
            {
                bool covered = false;
                for (const auto& s : gold)
                    covered |= w.start < s.end && s.start < w.end;
                if (!covered && w.surface != ".")
                    extra.push_back(w);
            }
            if (extra.empty())
                return gold_out;
            gold.push_back(extra[fnv(tag.str()) % extra.size()]);
            return OracleBackend::mark(text, gold, spec_.markers);
        }

        OracleBackend oracle_;
        TaskSpec spec_;
        double p_;
        std::map<std::string, std::string> text_;
    };

    /// Records every (tag, response) pair passing through.
    class RecordingBackend : public Backend
    {
    public:
        explicit RecordingBackend(Backend& inner) : inner_(inner) {}

        std::string id() const override
        {
            return inner_.id();
        }
        CompletionResponse complete(const CompletionRequest& req) override
        {
            auto r = inner_.complete(req);
            std::lock_guard lock(mutex_);
            records_.emplace_back(req, r.text);
            return r;
        }
        std::vector<std::pair<CompletionRequest, std::string>> records() const
        {
            std::lock_guard lock(mutex_);
            return records_;
        }

    private:
        Backend& inner_;
        mutable std::mutex mutex_;
        std::vector<std::pair<CompletionRequest, std::string>> records_;
    };

    /// Runs `predict` over the test split and returns predictions by id.
    inline std::map<std::string, Payload> predict_all(const Fixture& f, const PipelineConfig& cfg, Backend& backend,
                                                      CallLedger* ledger = nullptr,
                                                      std::map<std::string, Prediction>* full = nullptr)
    {
        DemoPool pool(f.train);
        TemplateSet templates(f.spec.kind);
        PipelineContext ctx{cfg, backend, pool, templates, ledger};
        std::map<std::string, Payload> out;
        for (const auto& t : f.test)
        {
            auto p    = predict(t, ctx);
            out[t.id] = p.payload;
            if (full)
                (*full)[t.id] = std::move(p);
        }
        return out;
    }

    inline PipelineConfig fixture_config(const Fixture& f, std::size_t n = 1, std::size_t k = 1)
    {
        PipelineConfig cfg;
        cfg.task               = f.spec;
        cfg.n_prompts          = n;
        cfg.retrieval.k        = k;
        cfg.retrieval.strategy = RetrievalStrategy::random;
        cfg.retrieval.seed     = 11;
        return cfg;
    }
} // namespace pf_test

#endif // PROMPTFORGE_TEST_FIXTURES_HPP_INCLUDED
