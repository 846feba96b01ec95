// View model for one open correction query. The shown pseudo label can be
// confirmed or replaced, never "corrected" to itself; that rule lives here
// so every input path (click, keyboard) shares it.

import type { AnswerBody, QueryView } from './api.js'

export type Submission = 'idle' | 'sending' | 'done' | 'conflict' | 'failed'

export interface QueryViewModel {
  view: QueryView
  selectedClass: number | null
  zoomed: boolean
  overlayVisible: boolean
  submission: Submission
}

export function newViewModel(view: QueryView): QueryViewModel {
  return {
    view,
    selectedClass: null,
    zoomed: true,
    overlayVisible: true,
    submission: 'idle',
  }
}

export function canSelectClass(vm: QueryViewModel, classId: number): boolean {
  return (
    Number.isInteger(classId) &&
    classId >= 0 &&
    classId < vm.view.class_names.length &&
    classId !== vm.view.pseudo_label
  )
}

export function selectClass(vm: QueryViewModel, classId: number): QueryViewModel {
  if (!canSelectClass(vm, classId)) return vm
  return { ...vm, selectedClass: classId }
}

export function clearSelection(vm: QueryViewModel): QueryViewModel {
  return { ...vm, selectedClass: null }
}

// Confirm is its own one-click act; a correction requires a selected class.
export function confirmAnswer(vm: QueryViewModel): AnswerBody {
  return { verdict: 'confirmed' }
}

export function correctionAnswer(vm: QueryViewModel): AnswerBody | null {
  if (vm.selectedClass === null) return null
  if (!canSelectClass(vm, vm.selectedClass)) return null
  return { verdict: 'corrected', label: vm.selectedClass }
}

export function submitEnabled(vm: QueryViewModel): boolean {
  return vm.submission === 'idle' && vm.selectedClass !== null
}

export function instructionText(vm: QueryViewModel): string {
  return (
    `Is this pixel a ${vm.view.pseudo_label_name}? ` +
    'Give the correct label only if the pseudo label is incorrect.'
  )
}
