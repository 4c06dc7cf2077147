"""Tiny locally-built checkpoints so the suite runs without model downloads."""
from __future__ import annotations

import pytest
import torch

BERT_VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "capital", "of", "is", "in", "a", "city", "country",
    "malta", "valletta", "paris", "france", "berlin", "germany", "london",
    ".", ",",
]

T5_WORDS = [
    "<pad>", "</s>", "<unk>",
    *[f"<extra_id_{i}>" for i in range(10)],
    "the", "capital", "of", "is", "in",
    "malta", "valletta", "paris", "france", "berlin", "london", ".",
]


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    vocab_file = tmp_path_factory.mktemp("bert-vocab") / "vocab.txt"
    vocab_file.write_text("\n".join(BERT_VOCAB), encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file), do_lower_case=True)
    torch.manual_seed(0)
    model = BertForMaskedLM(
        BertConfig(
            vocab_size=len(BERT_VOCAB),
            hidden_size=32,
            num_hidden_layers=2,
            num_attention_heads=2,
            intermediate_size=64,
            max_position_embeddings=64,
        )
    ).eval()
    return model, tokenizer


@pytest.fixture(scope="session")
def tiny_gpt2():
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

    alphabet = pre_tokenizers.ByteLevel.alphabet()
    vocab = {ch: i for i, ch in enumerate(sorted(alphabet))}
    vocab["<|endoftext|>"] = len(vocab)
    backend = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    backend.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    backend.decoder = decoders.ByteLevel()
    tokenizer = GPT2Tokenizer(
        tokenizer_object=backend,
        unk_token="<|endoftext|>",
        bos_token="<|endoftext|>",
        eos_token="<|endoftext|>",
    )
    torch.manual_seed(1)
    model = GPT2LMHeadModel(
        GPT2Config(
            vocab_size=len(vocab),
            n_positions=128,
            n_embd=32,
            n_layer=2,
            n_head=2,
            bos_token_id=vocab["<|endoftext|>"],
            eos_token_id=vocab["<|endoftext|>"],
        )
    ).eval()
    return model, tokenizer


@pytest.fixture(scope="session")
def tiny_t5():
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import PreTrainedTokenizerFast, T5Config, T5ForConditionalGeneration

    vocab = {w: i for i, w in enumerate(T5_WORDS)}
    backend = Tokenizer(models.WordLevel(vocab=vocab, unk_token="<unk>"))
    backend.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=backend,
        unk_token="<unk>",
        pad_token="<pad>",
        eos_token="</s>",
        additional_special_tokens=[f"<extra_id_{i}>" for i in range(10)],
    )
    torch.manual_seed(2)
    model = T5ForConditionalGeneration(
        T5Config(
            vocab_size=len(vocab),
            d_model=32,
            d_ff=64,
            num_layers=2,
            num_heads=2,
            d_kv=16,
            decoder_start_token_id=vocab["<pad>"],
            pad_token_id=vocab["<pad>"],
            eos_token_id=vocab["</s>"],
        )
    ).eval()
    return model, tokenizer
