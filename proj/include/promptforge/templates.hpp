#ifndef PROMPTFORGE_TEMPLATES_HPP_INCLUDED
#define PROMPTFORGE_TEMPLATES_HPP_INCLUDED

// Built-in prompt layouts for every pipeline step. Any of them can be
// replaced from a template file keyed by the same step name.

#include <map>
#include <string>

#include "prompting.hpp"

namespace promptforge
{
    namespace step
    {
        inline constexpr const char* classify     = "classify";
        inline constexpr const char* choice       = "choice";
        inline constexpr const char* nli          = "nli";
        inline constexpr const char* qa           = "qa";
        inline constexpr const char* ner          = "ner";
        inline constexpr const char* re_entity    = "re_entity";
        inline constexpr const char* re_relation  = "re_relation";
        inline constexpr const char* ee_trigger   = "ee_trigger";
        inline constexpr const char* ee_argument  = "ee_argument";
        inline constexpr const char* pos          = "pos";
        inline constexpr const char* dep_head     = "dep_head";
        inline constexpr const char* dep_relation = "dep_relation";
        inline constexpr const char* srl_sense    = "srl_sense";
        inline constexpr const char* srl_argument = "srl_argument";
        inline constexpr const char* verify       = "verify";
        inline constexpr const char* paraphrase   = "paraphrase";
        inline constexpr const char* rationale    = "rationale";
    } // namespace step

    namespace detail
    {
        inline PromptTemplate make_template(TaskKind task, std::string step, std::string header)
        {
            PromptTemplate t;
            t.task   = task;
            t.step   = std::move(step);
            t.header = std::move(header);
            return t;
        }

        inline PromptTemplate with_question(PromptTemplate t, const std::string& input_label = "INPUT")
        {
            t.demo   = input_label + ": {input}\nQUESTION: {ask}\nOUTPUT: {output}";
            t.prompt = "{header}\n\n{demos}" + input_label + ": {input}\nQUESTION: {ask}\nOUTPUT:";
            return t;
        }
    } // namespace detail

    /// Default layout for (task, step). Steps not used by `task` still return
    /// a usable layout so cross-cutting steps work for every task.
    inline PromptTemplate builtin_template(TaskKind task, const std::string& name)
    {
        using detail::make_template;
        using detail::with_question;

        if (name == step::classify)
            return make_template(task, name, "Classify the sentiment of the INPUT. Reply with one of: {label_words}.");
        if (name == step::choice)
        {
            auto t   = make_template(task, name, "Select the answer to the question from the options.");
            t.demo   = "Question: {input}\nOptions: {options}\nAnswer: {output}";
            t.prompt = "{header}\n\n{demos}Question: {input}\nOptions: {options}\nAnswer:";
            return t;
        }
        if (name == step::nli)
        {
            auto t   = make_template(task, name, "Does the premise {relation_phrase} the hypothesis? Answer yes or no.");
            t.demo   = "Premise: {premise}\nHypothesis: {hypothesis}\nAnswer: {output}";
            t.prompt = "{header}\n\n{demos}Premise: {premise}\nHypothesis: {hypothesis}\nAnswer:";
            return t;
        }
        if (name == step::qa)
        {
            auto t = make_template(task, name,
                                   "The context is split into numbered sentences. Reply with the number of the "
                                   "sentence holding the answer followed by the answer text, as in (2) Paris, or "
                                   "reply unanswerable.");
            t.demo   = "Context: {input}\nQuestion: {question}\nAnswer: {output}";
            t.prompt = "{header}\n\n{demos}Context: {input}\nQuestion: {question}\nAnswer:";
            return t;
        }
        if (name == step::ner || name == step::re_entity)
            return make_template(task, name,
                                 "Mark the start and end of each {label_desc} entity in the INPUT with {open} and "
                                 "{close}. If there is none, copy the INPUT unchanged.");
        if (name == step::re_relation)
            return with_question(make_template(
                task, name, "The two entities of interest are marked with {open} and {close}. Answer yes or no."));
        if (name == step::ee_trigger)
            return make_template(task, name,
                                 "Reply with the trigger word of the {event} event in the INPUT, or null if the "
                                 "INPUT has no such event.");
        if (name == step::ee_argument)
            return make_template(task, name,
                                 "The INPUT holds a {event} event whose trigger is marked with {open} and {close}. "
                                 "Reply with the words filling its {role_desc} role, or null if none do.");
        if (name == step::pos)
            return with_question(make_template(task, name, "Part-of-speech tags:\n{tag_list}"));
        if (name == step::dep_head)
            return with_question(make_template(
                task, name,
                "Copy the INPUT and mark each dependent of the given head word with {open} and {close}. If it has "
                "no dependents, copy the INPUT unchanged."));
        if (name == step::dep_relation)
            return with_question(make_template(
                task, name, "The head and dependent words are marked with {open} and {close}. Answer yes or no."));
        if (name == step::srl_sense)
            return with_question(
                make_template(task, name, "The predicate is marked with {open} and {close}. Answer yes or no."));
        if (name == step::srl_argument)
            return make_template(task, name,
                                 "The predicate is marked with {open} and {close}. Reply with the argument that "
                                 "expresses {role_desc}, or null if there is none.");
        if (name == step::verify)
        {
            auto t   = make_template(task, name, "Check the result below. Answer yes or no.");
            t.prompt = "{header}\n\nINPUT: {input}\nQUESTION: {ask}\nOUTPUT:";
            return t;
        }
        if (name == step::paraphrase)
        {
            auto t   = make_template(task, name,
                                     "Rewrite the text so that its meaning stays the same but the wording changes. "
                                     "Reply with the rewritten text only.");
            t.prompt = "{header}\n\nTEXT: {input}\nREWRITE:";
            return t;
        }
        if (name == step::rationale)
        {
            auto t   = make_template(task, name, "Explain briefly why the OUTPUT is correct for the INPUT.");
            t.prompt = "{header}\n\nINPUT: {input}\nOUTPUT: {output}\nEXPLANATION:";
            return t;
        }
        throw Error(ErrorCode::template_error, "no built-in template for step '" + name + "'");
    }

    /// Built-in layouts with optional per-step overrides.
    class TemplateSet
    {
    public:
        explicit TemplateSet(TaskKind task = TaskKind::sentiment) : task_(task) {}

        void set(PromptTemplate t)
        {
            overrides_[t.step] = std::move(t);
        }

        PromptTemplate get(const std::string& name) const
        {
            if (auto it = overrides_.find(name); it != overrides_.end())
                return it->second;
            return builtin_template(task_, name);
        }

        TaskKind task() const noexcept
        {
            return task_;
        }

    private:
        TaskKind task_;
        std::map<std::string, PromptTemplate> overrides_;
    };
} // namespace promptforge

#endif // PROMPTFORGE_TEMPLATES_HPP_INCLUDED
