import { describe, expect, it } from 'vitest'

import {
  canSelectClass,
  confirmAnswer,
  correctionAnswer,
  instructionText,
  newViewModel,
  selectClass,
  submitEnabled,
} from '../src/state.js'
import { makeQueries } from './fake_service.js'

const classNames = ['background', 'cat', 'dog', 'tvmonitor']
const view = makeQueries(classNames, [{ pseudo: 3, truth: 3 }])[0]!.view

describe('query view model', () => {
  it('starts with no selection and submit disabled', () => {
    const vm = newViewModel(view)
    expect(vm.selectedClass).toBeNull()
    expect(submitEnabled(vm)).toBe(false)
    expect(correctionAnswer(vm)).toBeNull()
  })

  it('never allows selecting the pseudo label itself', () => {
    const vm = newViewModel(view)
    expect(canSelectClass(vm, 3)).toBe(false)
    expect(selectClass(vm, 3)).toBe(vm) // no-op
    expect(canSelectClass(vm, 1)).toBe(true)
  })

  it('rejects out-of-range classes', () => {
    const vm = newViewModel(view)
    expect(canSelectClass(vm, -1)).toBe(false)
    expect(canSelectClass(vm, 4)).toBe(false)
    expect(canSelectClass(vm, 1.5)).toBe(false)
  })

  it('produces a corrected answer only for a valid selection', () => {
    const vm = selectClass(newViewModel(view), 2)
    expect(correctionAnswer(vm)).toEqual({ verdict: 'corrected', label: 2 })
    expect(submitEnabled(vm)).toBe(true)
  })

  it('confirm is always available as its own act', () => {
    expect(confirmAnswer(newViewModel(view))).toEqual({ verdict: 'confirmed' })
  })

  it('names the pseudo label in the instruction', () => {
    expect(instructionText(newViewModel(view))).toBe(
      'Is this pixel a tvmonitor? ' +
        'Give the correct label only if the pseudo label is incorrect.',
    )
  })
})
