"""Unit tests for finder.ingest."""

from __future__ import annotations

import json
import tempfile
from dataclasses import replace
from pathlib import Path
from unittest import TestCase

from kgb import SpyAgency

from finder.config import IngestConfig
from finder.errors import (ConfigurationError,
                           DuplicateDocumentError,
                           EmptyBodyError,
                           EnricherError,
                           MissingFieldError,
                           ParseError)
from finder.ingest import (Enricher,
                           NoOpTranslator,
                           StopwordLanguageDetector,
                           apply_enrichers,
                           chunk_text,
                           detect_language,
                           enrichers,
                           extract_tags,
                           ingest_corpus,
                           ingest_record,
                           load_gazetteer,
                           read_lines,
                           logger,
                           stage_raw,
                           write_processed)
from finder.models import Document, Modality, Provenance
from finder.text import tokenize


def make_record(
    number: str = 'D-1',
    body: str = 'The quick brown fox jumps over the lazy dog.',
    **metadata,
) -> str:
    values = {
        'dataset_document_number': number,
        'dataset_name': 'reports',
        'dataset_file_title': f'Title {number}',
    }
    values.update(metadata)

    return json.dumps({'metadata': values, 'body': body})


class ChunkTextTests(TestCase):
    """Tests for finder.ingest.chunk_text."""

    def test_windows(self) -> None:
        """Testing chunk_text produces overlapping windows"""
        body = ' '.join(f'w{i}' for i in range(10))

        chunks = chunk_text(body, 4, 1)

        self.assertEqual([tokenize(chunk.text) for chunk in chunks], [
            ['w0', 'w1', 'w2', 'w3'],
            ['w3', 'w4', 'w5', 'w6'],
            ['w6', 'w7', 'w8', 'w9'],
        ])
        self.assertEqual([chunk.token_count for chunk in chunks], [4, 4, 4])
        self.assertEqual([chunk.ordinal for chunk in chunks], [0, 1, 2])

    def test_short_tail(self) -> None:
        """Testing chunk_text with a short final window"""
        body = 'a b c d e'

        chunks = chunk_text(body, 3, 0)

        self.assertEqual([chunk.token_count for chunk in chunks], [3, 2])

    def test_single_chunk(self) -> None:
        """Testing chunk_text with a body shorter than one window"""
        chunks = chunk_text('  hello world  ', 256, 32, doc_id=7)

        self.assertEqual(len(chunks), 1)
        self.assertEqual(chunks[0].text, '  hello world  ')
        self.assertEqual(chunks[0].chunk_id, (7, 0))

    def test_reconstructs_body(self) -> None:
        """Testing chunk_text offsets reproduce the body when overlaps are
        removed
        """
        body = ('Alpha, beta; gamma -- delta!\n\nEpsilon zeta eta theta '
                'iota kappa lambda mu nu xi omicron pi.')

        for size, overlap in [(3, 0), (3, 2), (5, 1), (100, 10)]:
            chunks = chunk_text(body, size, overlap)
            rebuilt = chunks[0].text

            for prev, chunk in zip(chunks, chunks[1:]):
                self.assertEqual(chunk.text, body[chunk.start:chunk.end])
                rebuilt += chunk.text[prev.end - chunk.start:]

            self.assertEqual(chunks[0].start, 0)
            self.assertEqual(chunks[-1].end, len(body))
            self.assertEqual(rebuilt, body)

    def test_empty_body(self) -> None:
        """Testing chunk_text with a body that has no tokens"""
        for body in ('', '   ', '!!! ---'):
            with self.assertRaises(EmptyBodyError):
                chunk_text(body, 4, 1)

    def test_invalid_window(self) -> None:
        """Testing chunk_text with an overlap as large as the window"""
        with self.assertRaises(ValueError):
            chunk_text('a b c', 2, 2)


class ExtractTagsTests(TestCase):
    """Tests for finder.ingest.extract_tags."""

    def test_whole_tokens(self) -> None:
        """Testing extract_tags only matches whole token sequences"""
        tags = extract_tags(
            'Bowel obstruction was noted. Bowels were fine.',
            {'indication': ['bowel obstruction', 'bowels', 'colon']})

        self.assertEqual([(tag.field, tag.value) for tag in tags], [
            ('indication', 'bowel obstruction'),
            ('indication', 'bowels'),
        ])
        self.assertTrue(all(tag.provenance == Provenance.EXTRACTIVE
                            for tag in tags))

    def test_confidence_saturates(self) -> None:
        """Testing extract_tags confidence grows with occurrences"""
        once = extract_tags('widget', {'product': ['Widget']})
        many = extract_tags('widget widget widget widget',
                            {'product': ['Widget']})

        self.assertAlmostEqual(once[0].confidence, 1 / 3)
        self.assertEqual(many[0].confidence, 1.0)
        self.assertEqual(many[0].value, 'widget')


class LanguageTests(TestCase):
    """Tests for language detection."""

    def test_detect(self) -> None:
        """Testing detect_language with stopword-rich text"""
        self.assertEqual(detect_language('The cat is on the mat and it is '
                                         'asleep.'),
                         'en')
        self.assertEqual(detect_language('Le chat est sur la table et il '
                                         'dort dans la maison.'),
                         'fr')

    def test_undetermined(self) -> None:
        """Testing detect_language with no stopwords"""
        self.assertEqual(StopwordLanguageDetector().detect('xyzzy plugh'),
                         'und')
        self.assertEqual(detect_language(''), 'und')


class EnricherTests(SpyAgency, TestCase):
    """Tests for the enricher chain."""

    def test_language_filled(self) -> None:
        """Testing the default chain fills in a missing language"""
        doc = ingest_record(make_record(), IngestConfig(), 0)

        self.assertEqual(doc.metadata.language, 'en')

    def test_language_kept(self) -> None:
        """Testing the default chain keeps a supplied language"""
        doc = ingest_record(make_record(language='de'), IngestConfig(), 0)

        self.assertEqual(doc.metadata.language, 'de')

    def test_chain_order(self) -> None:
        """Testing apply_enrichers runs enrichers in order"""
        translator = enrichers.get('translate')

        self.spy_on(translator.apply)

        doc = ingest_record(make_record(), IngestConfig(), 0)

        self.assertSpyCallCount(translator.apply, 1)
        self.assertEqual(translator.apply.last_call.args[0].metadata.language,
                         'en')
        self.assertIs(doc, translator.apply.last_call.return_value)

    def test_identity_changed(self) -> None:
        """Testing apply_enrichers rejects an enricher that changes the
        document ID
        """
        class Renumberer(Enricher):
            name = 'test-renumber'

            def apply(self, document: Document) -> Document:
                return replace(document, doc_id=document.doc_id + 1,
                               chunks=())

        enricher = Renumberer()
        enrichers.register(enricher)
        self.addCleanup(enrichers.unregister, enricher)

        doc = ingest_record(make_record(), IngestConfig(enrichers=()), 0)

        with self.assertRaises(EnricherError):
            apply_enrichers(doc, ['test-renumber'])

    def test_noop_translator(self) -> None:
        """Testing NoOpTranslator returns the document unchanged"""
        doc = ingest_record(make_record(), IngestConfig(enrichers=()), 0)

        self.assertIs(NoOpTranslator().apply(doc), doc)


class IngestRecordTests(TestCase):
    """Tests for finder.ingest.ingest_record."""

    def test_record(self) -> None:
        """Testing ingest_record with a valid record"""
        config = IngestConfig(gazetteer={'animal': ['brown fox']})
        line = json.dumps({
            'metadata': {
                'dataset_document_number': 'D-9',
                'dataset_name': 'reports',
                'dataset_file_title': 'Foxes',
                'custom': 'x',
            },
            'modality': 'slides',
            'body': 'A brown fox.',
            'tags': [{'field': 'animal', 'value': 'fox',
                      'provenance': 'manual', 'confidence': 0.5}],
        })

        doc = ingest_record(line, config, 4)

        self.assertEqual(doc.doc_id, 4)
        self.assertEqual(doc.modality, Modality.SLIDES)
        self.assertEqual(doc.document_number, 'D-9')
        self.assertEqual(doc.metadata.extras, {'custom': 'x'})
        self.assertEqual([(tag.value, tag.provenance) for tag in doc.tags],
                         [('fox', Provenance.MANUAL),
                          ('brown fox', Provenance.EXTRACTIVE)])
        self.assertEqual(len(doc.chunks), 1)

    def test_invalid_json(self) -> None:
        """Testing ingest_record with invalid JSON"""
        with self.assertRaises(ParseError) as cm:
            ingest_record('{nope', IngestConfig(), 0, source='in.jsonl',
                          line_number=12)

        self.assertEqual(cm.exception.line_number, 12)
        self.assertTrue(str(cm.exception).startswith('in.jsonl, line 12: '))

    def test_missing_body(self) -> None:
        """Testing ingest_record with a non-string body"""
        with self.assertRaises(ParseError):
            ingest_record(json.dumps({'metadata': {}, 'body': 3}),
                          IngestConfig(), 0)

    def test_invalid_modality(self) -> None:
        """Testing ingest_record with an unknown modality"""
        line = json.dumps({
            'metadata': json.loads(make_record())['metadata'],
            'modality': 'hologram',
            'body': 'text',
        })

        with self.assertRaises(ParseError):
            ingest_record(line, IngestConfig(), 0)

    def test_missing_field(self) -> None:
        """Testing ingest_record with missing metadata"""
        line = json.dumps({'metadata': {'dataset_name': 'x'},
                           'body': 'text'})

        with self.assertRaises(MissingFieldError):
            ingest_record(line, IngestConfig(), 0)

    def test_empty_body(self) -> None:
        """Testing ingest_record with an empty body"""
        with self.assertRaises(EmptyBodyError):
            ingest_record(make_record(body='  '), IngestConfig(), 0)


class IngestCorpusTests(SpyAgency, TestCase):
    """Tests for finder.ingest.ingest_corpus."""

    def test_dense_ids(self) -> None:
        """Testing ingest_corpus assigns dense IDs in input order"""
        lines = [
            make_record('D-1'),
            '',
            '# comment',
            make_record('D-2', body=''),
            make_record('D-3'),
            '{broken',
            make_record('D-4'),
        ]

        with self.assertLogs(logger, 'WARNING') as cm:
            result = ingest_corpus(lines, IngestConfig(), start_id=10,
                                   strict=False, workers=4)

        self.assertEqual([doc.doc_id for doc in result.documents],
                         [10, 11, 12])
        self.assertEqual([doc.document_number for doc in result.documents],
                         ['D-1', 'D-3', 'D-4'])
        self.assertTrue(all(chunk.doc_id == doc.doc_id
                            for doc in result.documents
                            for chunk in doc.chunks))
        self.assertEqual([line for line, error in result.errors], [4, 6])
        self.assertEqual(result.accepted, 3)
        self.assertEqual(result.rejected, 2)
        self.assertEqual(len(cm.output), 2)

    def test_order_independent_of_workers(self) -> None:
        """Testing ingest_corpus output does not depend on worker count"""
        lines = [make_record(f'D-{i}') for i in range(40)]

        one = ingest_corpus(lines, IngestConfig(), workers=1)
        many = ingest_corpus(lines, IngestConfig(), workers=16)

        self.assertEqual(one.documents, many.documents)

    def test_duplicates(self) -> None:
        """Testing ingest_corpus rejects duplicate document numbers"""
        lines = [make_record('D-1'), make_record('D-1'), make_record('D-2')]

        result = ingest_corpus(lines, IngestConfig(), strict=False,
                               existing_numbers=['D-2'])

        self.assertEqual(result.accepted, 1)
        self.assertEqual([type(error) for line, error in result.errors],
                         [DuplicateDocumentError, DuplicateDocumentError])

    def test_strict(self) -> None:
        """Testing ingest_corpus raises in strict mode"""
        with self.assertRaises(ParseError):
            ingest_corpus([make_record(), 'nope'], IngestConfig())


class IngestConfigTests(TestCase):
    """Tests for finder.config.IngestConfig validation."""

    def test_overlap(self) -> None:
        """Testing IngestConfig rejects an overlap as large as the window"""
        with self.assertRaises(ConfigurationError):
            IngestConfig(max_chunk_tokens=4, chunk_overlap_tokens=4)

    def test_empty_phrase(self) -> None:
        """Testing IngestConfig rejects an empty gazetteer phrase"""
        with self.assertRaises(ConfigurationError):
            IngestConfig(gazetteer={'product': ['  ']})


class WorkspaceTests(TestCase):
    """Tests for the raw and processed workspace layout."""

    def setUp(self) -> None:
        super().setUp()

        self._tempdir = tempfile.TemporaryDirectory()
        self.root = Path(self._tempdir.name)

    def tearDown(self) -> None:
        self._tempdir.cleanup()

        super().tearDown()

    def test_stage_and_write(self) -> None:
        """Testing stage_raw and write_processed"""
        corpus = self.root / 'corpus.jsonl'
        corpus.write_text(make_record() + '\n', encoding='utf-8')

        staged = stage_raw(corpus, self.root / 'ws')

        self.assertEqual(staged, self.root / 'ws' / 'raw' / 'corpus.jsonl')
        self.assertEqual(staged.read_text(encoding='utf-8'),
                         corpus.read_text(encoding='utf-8'))

        result = ingest_corpus([make_record()], IngestConfig())
        paths = write_processed(result.documents, self.root / 'ws')

        self.assertEqual(paths, [self.root / 'ws' / 'processed' / '0.json'])
        self.assertEqual(
            Document.from_dict(json.loads(paths[0].read_text('utf-8'))),
            result.documents[0])

    def test_load_gazetteer(self) -> None:
        """Testing load_gazetteer"""
        path = self.root / 'gazetteer.json'
        path.write_text('{"product": ["Widget"]}', encoding='utf-8')

        self.assertEqual(load_gazetteer(path), {'product': ['Widget']})

    def test_load_gazetteer_invalid(self) -> None:
        """Testing load_gazetteer with an invalid file"""
        path = self.root / 'gazetteer.json'
        path.write_text('{"product": "Widget"}', encoding='utf-8')

        with self.assertRaises(ParseError):
            load_gazetteer(path)

    def test_read_lines(self) -> None:
        """Testing read_lines with LF and CRLF line endings"""
        path = self.root / 'corpus.jsonl'
        path.write_bytes(b'first\r\nsecond \xe2\x80\xa8 still second\n'
                         b'\nlast\n')

        self.assertEqual(read_lines(path),
                         ['first', 'second \u2028 still second', '', 'last'])

        path.write_bytes(b'')
        self.assertEqual(read_lines(path), [])

    def test_read_lines_invalid_utf8(self) -> None:
        """Testing read_lines with invalid UTF-8"""
        path = self.root / 'corpus.jsonl'
        path.write_bytes(make_record().encode('utf-8') + b'\n' +
                         make_record('D-2').encode('utf-8') + b'\n' +
                         b'{"body": "caf\xe9"}\n')

        with self.assertRaises(ParseError) as cm:
            read_lines(path)

        self.assertEqual(cm.exception.source, str(path))
        self.assertEqual(cm.exception.line_number, 3)
        self.assertIn('invalid UTF-8', cm.exception.reason)
